//! Mean-semigroup generator, Perron–Frobenius eigentriple, the ergodicity
//! coefficients `Δ_t`, `Δ_t^(2)` and the assumption audit.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::semigroup::second_moment_forms;

/// Generator `L` of the mean semigroup.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanGenerator {
    pub l: DMatrix<f64>,
}

impl MeanGenerator {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() || l.nrows() == 0 || l.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("generator must be a finite non-empty square matrix".into()));
        }
        Ok(Self { l })
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        (&self.l * t).exp()
    }

    pub fn norm_inf(&self) -> f64 {
        self.l.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Strong connectivity of the off-diagonal pattern.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(x) = stack.pop() {
                for y in 0..n {
                    let w = if forward { self.l[(x, y)] } else { self.l[(y, x)] };
                    if y != x && w > 0.0 && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

/// `L = Q + diag(beta)(M - I)`, plus `diag(b)` for superprocesses.
pub fn build_mean_generator(model: &Model) -> Result<MeanGenerator> {
    let mean = model.mean_matrix()?;
    let n = model.n();
    let q = model.motion();
    let beta = model.beta();
    let mut l = DMatrix::from_fn(n, n, |x, y| q[x][y] + beta[x] * mean[(x, y)]);
    for x in 0..n {
        l[(x, x)] -= beta[x];
        if let Model::Super(sp) = model {
            l[(x, x)] += sp.b[x];
        }
    }
    MeanGenerator::new(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenTriple {
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub phi_tilde: Vec<f64>,
    pub residual: f64,
    /// `lambda` minus the next-largest real part of the spectrum; absent
    /// for a single type.
    pub gap: Option<f64>,
    pub iterations: usize,
}

impl EigenTriple {
    pub fn pair(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.phi_tilde).map(|(a, b)| a * b).sum()
    }

    pub fn pair_phi(&self, mu: &[f64]) -> f64 {
        mu.iter().zip(&self.phi).map(|(a, b)| a * b).sum()
    }
}

const POWER_BUDGET: usize = 200_000;
const REFINE_BUDGET: usize = 50;

/// Leading eigentriple with `<1, phi~> = 1` and `<phi, phi~> = 1`.
pub fn eigen_triple(gen: &MeanGenerator, tol: f64) -> Result<EigenTriple> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    if !gen.is_irreducible() {
        return Err(Error::Reducible);
    }
    let n = gen.n();
    let l = &gen.l;
    if n == 1 {
        return Ok(EigenTriple {
            lambda: l[(0, 0)],
            phi: vec![1.0],
            phi_tilde: vec![1.0],
            residual: 0.0,
            gap: None,
            iterations: 0,
        });
    }
    let h = 1.0 / (1.0 + l.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    let p = gen.exp(h);
    let pt = p.transpose();
    let (mut phi, it_r) = power(&p);
    let (mut psi, it_l) = power(&pt);
    let mut lambda = rayleigh(l, &phi, &psi);
    let mut residual = residual_of(l, &phi, &psi, lambda);
    let mut iterations = it_r + it_l;
    let mut refine = 0;
    while residual > tol && refine < REFINE_BUDGET {
        refine += 1;
        phi = inverse_step(l, lambda, &phi).unwrap_or(phi);
        psi = inverse_step(&l.transpose(), lambda, &psi).unwrap_or(psi);
        lambda = rayleigh(l, &phi, &psi);
        residual = residual_of(l, &phi, &psi, lambda);
    }
    iterations += refine;
    if residual > tol {
        return Err(Error::EigenNotConverged { residual, iterations });
    }
    if phi.iter().any(|v| *v <= 0.0) || psi.iter().any(|v| *v <= 0.0) {
        return Err(Error::EigenNotConverged { residual, iterations });
    }
    psi /= psi.sum();
    let scale = phi.dot(&psi);
    phi /= scale;
    let residual = residual_of(l, &phi, &psi, lambda);
    Ok(EigenTriple {
        lambda,
        phi: phi.iter().copied().collect(),
        phi_tilde: psi.iter().copied().collect(),
        residual,
        gap: spectral_gap(l, lambda),
        iterations,
    })
}

fn power(p: &DMatrix<f64>) -> (DVector<f64>, usize) {
    let n = p.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for it in 1..=POWER_BUDGET {
        let mut w = p * &v;
        let norm = w.norm();
        if !(norm > 0.0) {
            return (v, it);
        }
        w /= norm;
        let change = (&w - &v).amax();
        v = w;
        if change < 1e-14 {
            return (v, it);
        }
    }
    (v, POWER_BUDGET)
}

fn rayleigh(l: &DMatrix<f64>, phi: &DVector<f64>, psi: &DVector<f64>) -> f64 {
    psi.dot(&(l * phi)) / psi.dot(phi)
}

/// Residual after the output normalization, so the reported value matches
/// the vectors handed back.
fn residual_of(l: &DMatrix<f64>, phi: &DVector<f64>, psi: &DVector<f64>, lambda: f64) -> f64 {
    let psi_n = psi / psi.sum();
    let phi_n = phi / phi.dot(&psi_n);
    let r = (l * &phi_n - &phi_n * lambda).amax();
    let s = (l.transpose() * &psi_n - &psi_n * lambda).amax();
    r.max(s)
}

fn inverse_step(a: &DMatrix<f64>, shift: f64, v: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    for bump in [0.0, 1e-14, 1e-12] {
        let m = a - DMatrix::identity(n, n) * (shift + bump * scale);
        if let Some(mut w) = m.lu().solve(v) {
            if w.iter().all(|x| x.is_finite()) {
                if w.sum() < 0.0 {
                    w = -w;
                }
                let norm = w.norm();
                if norm > 0.0 {
                    return Some(w / norm);
                }
            }
        }
    }
    None
}

fn spectral_gap(l: &DMatrix<f64>, lambda: f64) -> Option<f64> {
    let schur = nalgebra::linalg::Schur::try_new(l.clone(), 1e-15, 10_000)?;
    let eig = schur.complex_eigenvalues();
    let mut re: Vec<f64> = eig.iter().map(|z| z.re).collect();
    re.sort_by(|a, b| b.total_cmp(a));
    // the Perron root is simple, so drop the entry nearest to lambda
    let idx = re
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - lambda).abs().total_cmp(&(b.1 - lambda).abs()))
        .map(|(i, _)| i)?;
    re.remove(idx);
    re.first().map(|next| lambda - next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Supercritical,
    Critical,
    Subcritical,
}

/// Default criticality band `1e-9 ||L||_inf`.
pub fn default_band(gen: &MeanGenerator) -> f64 {
    1e-9 * gen.norm_inf().max(1.0)
}

/// Critical iff `|lambda| <= max(band, residual)`, otherwise the sign decides.
pub fn classify_criticality(triple: &EigenTriple, band: f64) -> Criticality {
    let band = band.max(triple.residual);
    if triple.lambda.abs() <= band {
        Criticality::Critical
    } else if triple.lambda > 0.0 {
        Criticality::Supercritical
    } else {
        Criticality::Subcritical
    }
}

/// Generator, eigentriple and criticality of a model in one call.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub generator: MeanGenerator,
    pub triple: EigenTriple,
    pub criticality: Criticality,
}

pub const EIGEN_TOL: f64 = 1e-10;

pub fn analyze(model: &Model) -> Result<Spectrum> {
    let generator = build_mean_generator(model)?;
    let triple = eigen_triple(&generator, EIGEN_TOL)?;
    let criticality = classify_criticality(&triple, default_band(&generator));
    Ok(Spectrum {
        generator,
        triple,
        criticality,
    })
}

/// `Δ_t = sup_{x, f in [0,1]^n} |phi(x)^{-1} e^{-lambda t} T_t[f](x) - <f, phi~>|`.
pub fn delta_first(gen: &MeanGenerator, triple: &EigenTriple, t: f64) -> f64 {
    let e = gen.exp(t);
    let decay = (-triple.lambda * t).exp();
    (0..gen.n())
        .map(|x| {
            let (mut pos, mut neg) = (0.0, 0.0);
            for y in 0..gen.n() {
                let v = decay * e[(x, y)] / triple.phi[x] - triple.phi_tilde[y];
                if v > 0.0 {
                    pos += v;
                } else {
                    neg -= v;
                }
            }
            f64::max(pos, neg)
        })
        .fold(0.0, f64::max)
}

/// Largest `n` for which the box supremum of a quadratic form is found by
/// exact face enumeration.
pub const EXACT_BOX_MAX_N: usize = 10;

/// `sup_{f in [0,1]^n} |f^T B f|` for symmetric `B`; exact for small `n`,
/// otherwise the bound `sum |B_ij|`.
pub fn box_quadratic_sup(b: &DMatrix<f64>) -> (f64, bool) {
    let n = b.nrows();
    if n > EXACT_BOX_MAX_N {
        return (b.iter().map(|v| v.abs()).sum(), false);
    }
    let mut best = 0.0_f64;
    let total = 3usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..total {
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut f = DVector::from_fn(n, |i, _| if state[i] == 1 { 1.0 } else { 0.0 });
        if !free.is_empty() {
            let k = free.len();
            let bff = DMatrix::from_fn(k, k, |i, j| b[(free[i], free[j])]);
            let rhs = DVector::from_fn(k, |i, _| -(0..n).filter(|&j| state[j] == 1).map(|j| b[(free[i], j)]).sum::<f64>());
            let Some(sol) = bff.lu().solve(&rhs) else { continue };
            if sol.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
                continue;
            }
            for (i, &fi) in free.iter().enumerate() {
                f[fi] = sol[i];
            }
        }
        best = best.max((f.transpose() * b * &f)[(0, 0)].abs());
    }
    (best, true)
}

/// `Δ_t^(2)`: the critical (`lambda = 0`) or subcritical normalization of
/// the second-moment semigroup against its rank-one limit.
pub fn delta_second(model: &Model, gen: &MeanGenerator, triple: &EigenTriple, criticality: Criticality, t: f64) -> Result<(f64, bool)> {
    let forms = second_moment_forms(model, gen, t)?;
    let n = gen.n();
    let pt = DVector::from_column_slice(&triple.phi_tilde);
    let limit = match criticality {
        Criticality::Critical => {
            if t == 0.0 {
                return Ok((f64::NAN, true));
            }
            let mut vphi = vec![0.0; n];
            model.v_unchecked(&triple.phi, f64::INFINITY, &mut vphi);
            let vbar = triple.pair(&vphi);
            &pt * pt.transpose() * vbar
        }
        Criticality::Subcritical => l2_form(model, gen, triple)?,
        Criticality::Supercritical => {
            return Err(Error::NotApplicable("second-moment normalization requires lambda <= 0".into()));
        }
    };
    let mut sup = 0.0_f64;
    let mut exact = true;
    for (x, m) in forms.iter().enumerate() {
        let scaled = match criticality {
            Criticality::Critical => m / (t * triple.phi[x]),
            _ => m * ((-triple.lambda * t).exp() / triple.phi[x]),
        };
        let (s, e) = box_quadratic_sup(&(scaled - &limit));
        sup = sup.max(s);
        exact &= e;
    }
    Ok((sup, exact))
}

/// Matrix of `L_2(g) = <g^2, phi~> + ∫_0^∞ e^{-lambda s} <V[T_s g], phi~> ds`.
pub fn l2_form(model: &Model, gen: &MeanGenerator, triple: &EigenTriple) -> Result<DMatrix<f64>> {
    if !(triple.lambda < 0.0) {
        return Err(Error::NotApplicable("L_2 requires a subcritical model".into()));
    }
    let n = gen.n();
    let w = model.v_forms();
    let mut q = DMatrix::zeros(n, n);
    for (x, wx) in w.iter().enumerate() {
        q += wx * triple.phi_tilde[x];
    }
    // (A^T X + X A) = -Q with A = L - lambda/2, via the Kronecker system
    let a = &gen.l - DMatrix::identity(n, n) * (0.5 * triple.lambda);
    let id = DMatrix::<f64>::identity(n, n);
    let sys = id.kronecker(&a.transpose()) + a.transpose().kronecker(&id);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotApplicable("Lyapunov system for L_2 is singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    let sym = 0.5 * (&x + x.transpose());
    Ok(DMatrix::from_diagonal(&DVector::from_column_slice(&triple.phi_tilde)) + sym)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaProfile {
    pub times: Vec<f64>,
    pub delta: Vec<f64>,
    pub delta2: Vec<f64>,
    /// Fitted `epsilon` in `Δ_t ≈ C e^{-epsilon t}`; absent with fewer than
    /// two usable points.
    pub eps_fit: Option<f64>,
    /// False when some `Δ_t^(2)` is the coarse bound rather than the exact supremum.
    pub delta2_exact: bool,
}

/// Minus the least-squares slope of `ln Δ` against `t`, ignoring values
/// below `1e-12`.
pub fn fit_decay(times: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v >= 1e-12 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    Some(-sxy / sxx)
}

pub fn delta_profile(model: &Model, spectrum: &Spectrum, times: &[f64]) -> Result<DeltaProfile> {
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidInput("times must be nonnegative and strictly increasing".into()));
    }
    let gen = &spectrum.generator;
    let delta: Vec<f64> = times.iter().map(|&t| delta_first(gen, &spectrum.triple, t)).collect();
    let mut delta2 = Vec::with_capacity(times.len());
    let mut exact = true;
    for &t in times {
        let (d, e) = delta_second(model, gen, &spectrum.triple, spectrum.criticality, t)?;
        delta2.push(d);
        exact &= e;
    }
    Ok(DeltaProfile {
        eps_fit: fit_decay(times, &delta),
        times: times.to_vec(),
        delta,
        delta2,
        delta2_exact: exact,
    })
}

/// Both coefficients at one time.
pub fn compute_delta(model: &Model, spectrum: &Spectrum, t: f64) -> Result<(f64, f64)> {
    let d = delta_first(&spectrum.generator, &spectrum.triple, t);
    let (d2, _) = delta_second(model, &spectrum.generator, &spectrum.triple, spectrum.criticality, t)?;
    Ok((d, d2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionOptions {
    pub times: Vec<f64>,
    pub h4_starts: usize,
    pub h4_tol: f64,
    pub seed: u64,
}

impl Default for AssumptionOptions {
    fn default() -> Self {
        Self {
            times: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            h4_starts: 64,
            h4_tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Report {
    pub second_moment_sup: f64,
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Report {
    pub lambda: f64,
    pub residual: f64,
    pub gap: Option<f64>,
    pub eps_fit: Option<f64>,
    pub delta_sup: f64,
    pub profile: DeltaProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H3Report {
    /// `lambda <= 0` together with irreducibility.
    pub sufficient_condition: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Report {
    pub k: f64,
    pub m: f64,
    pub holds: bool,
    pub estimated: bool,
    pub tol: f64,
    pub minimizer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub criticality: Criticality,
    pub h1: H1Report,
    pub h2: H2Report,
    pub h3: H3Report,
    pub h4: H4Report,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.h1.finite && self.h3.sufficient_condition && self.h4.holds
    }
}

pub fn check_assumptions(model: &Model, spectrum: &Spectrum, opts: &AssumptionOptions) -> Result<AssumptionReport> {
    let diag = model.validate();
    let second = diag.second_moment_sup;
    diag.into_result()?;
    if !spectrum.generator.is_irreducible() {
        return Err(Error::Reducible);
    }
    let triple = &spectrum.triple;
    let profile = if spectrum.criticality == Criticality::Supercritical {
        let delta: Vec<f64> = opts.times.iter().map(|&t| delta_first(&spectrum.generator, triple, t)).collect();
        DeltaProfile {
            eps_fit: fit_decay(&opts.times, &delta),
            times: opts.times.clone(),
            delta2: vec![f64::NAN; delta.len()],
            delta,
            delta2_exact: false,
        }
    } else {
        delta_profile(model, spectrum, &opts.times)?
    };
    let delta_sup = profile.delta.iter().copied().fold(0.0, f64::max);
    let (k, minimizer) = h4_minimum(model, triple, opts.h4_starts, opts.seed);
    Ok(AssumptionReport {
        criticality: spectrum.criticality,
        h1: H1Report {
            second_moment_sup: second,
            finite: second.is_finite(),
        },
        h2: H2Report {
            lambda: triple.lambda,
            residual: triple.residual,
            gap: triple.gap,
            eps_fit: profile.eps_fit,
            delta_sup,
            profile,
        },
        h3: H3Report {
            sufficient_condition: spectrum.criticality != Criticality::Supercritical,
            note: "holds by lambda <= 0 and irreducibility; not verified probabilistically".into(),
        },
        h4: H4Report {
            k,
            m: model.largest_family(),
            holds: k > opts.h4_tol,
            estimated: true,
            tol: opts.h4_tol,
            minimizer,
        },
    })
}

/// `min <V[f], phi~>` over `{f >= 0, <f, phi~> = 1}` by projected gradient
/// descent from the uniform start and `starts` random simplex points.
pub fn h4_minimum(model: &Model, triple: &EigenTriple, starts: usize, seed: u64) -> (f64, Vec<f64>) {
    let n = model.n();
    let mut q = DMatrix::zeros(n, n);
    for (x, w) in model.v_forms().iter().enumerate() {
        q += w * triple.phi_tilde[x];
    }
    // f = D^{-1} g with g on the standard simplex
    let dinv = DMatrix::from_diagonal(&DVector::from_iterator(n, triple.phi_tilde.iter().map(|v| 1.0 / v)));
    let p = &dinv * &q * &dinv;
    let p = 0.5 * (&p + p.transpose());
    let mut inits = vec![DVector::from_element(n, 1.0 / n as f64)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..starts {
        let e: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = e.iter().sum();
        inits.push(DVector::from_iterator(n, e.into_iter().map(|v| v / s)));
    }
    let results: Vec<(f64, DVector<f64>)> = inits.into_par_iter().map(|g| descend(&p, g)).collect();
    let (best, g) = results
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r)
        .expect("at least the uniform start");
    let f = &dinv * g;
    (best, f.iter().copied().collect())
}

fn descend(p: &DMatrix<f64>, mut g: DVector<f64>) -> (f64, DVector<f64>) {
    let obj = |g: &DVector<f64>| (g.transpose() * p * g)[(0, 0)];
    let mut val = obj(&g);
    let mut step = 1.0 / (2.0 * p.amax() * p.nrows() as f64 + 1e-300);
    for _ in 0..100_000 {
        let grad = p * &g * 2.0;
        let mut moved = false;
        while step > 1e-18 {
            let cand = project_simplex(&(&g - &grad * step));
            let cv = obj(&cand);
            if cv < val {
                let drop = val - cv;
                g = cand;
                val = cv;
                moved = true;
                if drop < 1e-12 {
                    return (val, g);
                }
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (val, g)
}

fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::model::{BranchingModel, OffspringAtom};

    fn gen_of(m: BranchingModel) -> MeanGenerator {
        build_mean_generator(&Model::Branching(m)).unwrap()
    }

    #[test]
    fn generator_examples() {
        assert_eq!(gen_of(corpus::critical_binary()).l, DMatrix::from_element(1, 1, 0.0));
        assert_eq!(gen_of(corpus::subcritical_binary()).l, DMatrix::from_element(1, 1, -0.5));
        assert_eq!(gen_of(corpus::swap_model()).l, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn eigen_examples() {
        let t = eigen_triple(&MeanGenerator::new(DMatrix::from_element(1, 1, 0.0)).unwrap(), 1e-10).unwrap();
        assert_eq!((t.lambda, t.phi.clone(), t.phi_tilde.clone()), (0.0, vec![1.0], vec![1.0]));
        let t = eigen_triple(&gen_of(corpus::swap_model()), 1e-10).unwrap();
        assert!(t.lambda.abs() < 1e-12);
        for x in 0..2 {
            assert!((t.phi[x] - 1.0).abs() < 1e-12);
            assert!((t.phi_tilde[x] - 0.5).abs() < 1e-12);
        }
        assert!((t.gap.unwrap() - 2.0).abs() < 1e-10);
        let t = eigen_triple(&MeanGenerator::new(DMatrix::from_element(1, 1, -0.5)).unwrap(), 1e-10).unwrap();
        assert_eq!(t.lambda, -0.5);
    }

    #[test]
    fn reducible_rejected() {
        let g = MeanGenerator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0])).unwrap();
        assert_eq!(eigen_triple(&g, 1e-10), Err(Error::Reducible));
    }

    #[test]
    fn three_type_triple_is_normalized() {
        let g = gen_of(corpus::three_type_nonlocal());
        let t = eigen_triple(&g, 1e-10).unwrap();
        assert!(t.residual <= 1e-10);
        assert!((t.phi_tilde.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((t.pair(&t.phi) - 1.0).abs() < 1e-12);
        assert!(t.lambda.abs() < 1e-10);
        // independent oracle: left null vector from the transposed system with one row replaced by normalization
        let mut a = g.l.transpose();
        for j in 0..3 {
            a[(2, j)] = 1.0;
        }
        let rhs = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        let pi = a.lu().solve(&rhs).unwrap();
        for j in 0..3 {
            assert!((pi[j] - t.phi_tilde[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn criticality_classes() {
        let mk = |lambda| EigenTriple {
            lambda,
            phi: vec![1.0],
            phi_tilde: vec![1.0],
            residual: 0.0,
            gap: None,
            iterations: 0,
        };
        assert_eq!(classify_criticality(&mk(0.0), 1e-9), Criticality::Critical);
        assert_eq!(classify_criticality(&mk(-0.5), 1e-9), Criticality::Subcritical);
        assert_eq!(classify_criticality(&mk(0.3), 1e-9), Criticality::Supercritical);
    }

    #[test]
    fn delta_examples() {
        let g = gen_of(corpus::critical_binary());
        let t = eigen_triple(&g, 1e-10).unwrap();
        assert_eq!(delta_first(&g, &t, 0.0), 0.0);
        let g = gen_of(corpus::swap_model());
        let t = eigen_triple(&g, 1e-10).unwrap();
        let d1 = delta_first(&g, &t, 1.0);
        assert!((d1 - 0.5 * (-2.0_f64).exp()).abs() < 1e-12);
        assert!((d1 - 0.06767).abs() < 1e-5);
        let times: Vec<f64> = (1..=5).map(|k| k as f64).collect();
        let vals: Vec<f64> = times.iter().map(|&s| delta_first(&g, &t, s)).collect();
        assert!((fit_decay(&times, &vals).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn box_sup_matches_grid_search() {
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.5, -2.0, 0.3, 0.0, 0.5, 0.0, -1.5]);
        let (exact, flag) = box_quadratic_sup(&b);
        assert!(flag);
        let mut grid = 0.0_f64;
        let k = 40;
        for i in 0..=k {
            for j in 0..=k {
                for l in 0..=k {
                    let f = DVector::from_column_slice(&[i as f64 / k as f64, j as f64 / k as f64, l as f64 / k as f64]);
                    grid = grid.max((f.transpose() * &b * &f)[(0, 0)].abs());
                }
            }
        }
        assert!(exact >= grid - 1e-12);
        assert!(exact <= grid + 1e-2);
    }

    #[test]
    fn delta2_critical_binary_closed_form() {
        // T_t^(2)[f] = f^2 (1 + t) for single-type critical binary
        let m = Model::Branching(corpus::critical_binary());
        let s = analyze(&m).unwrap();
        let (_, d2) = compute_delta(&m, &s, 4.0).unwrap();
        assert!((d2 - 0.25).abs() < 1e-8);
    }

    #[test]
    fn l2_subcritical_single_type() {
        // lambda = -1/2, V[g] = g^2 / 2 for p2 = 1/4: L_2 = 1 + ∫ e^{s/2} e^{-s} / 2 ds = 2
        let m = Model::Branching(corpus::subcritical_binary());
        let s = analyze(&m).unwrap();
        let l2 = l2_form(&m, &s.generator, &s.triple).unwrap();
        assert!((l2[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn assumption_examples() {
        let m = Model::Branching(corpus::critical_binary());
        let s = analyze(&m).unwrap();
        let r = check_assumptions(&m, &s, &AssumptionOptions::default()).unwrap();
        assert!((r.h4.k - 1.0).abs() < 1e-12);
        assert!(r.h4.holds);
        assert_eq!(r.h4.m, 2.0);

        let unit = Model::Branching(BranchingModel::without_motion(1, vec![1.0], vec![vec![OffspringAtom::new(1.0, vec![0])]]));
        let s = analyze(&unit).unwrap();
        let r = check_assumptions(&unit, &s, &AssumptionOptions::default()).unwrap();
        assert!(!r.h4.holds);
        assert_eq!(r.h4.k, 0.0);

        let swap = Model::Branching(corpus::swap_model());
        let s = analyze(&swap).unwrap();
        let r = check_assumptions(&swap, &s, &AssumptionOptions::default()).unwrap();
        assert_eq!(r.h1.second_moment_sup, 2.0);
    }

    #[test]
    fn h4_is_deterministic_and_not_above_uniform() {
        let m = Model::Branching(corpus::three_type_nonlocal());
        let s = analyze(&m).unwrap();
        let (k1, f1) = h4_minimum(&m, &s.triple, 16, 3);
        let (k2, f2) = h4_minimum(&m, &s.triple, 16, 3);
        assert_eq!(k1, k2);
        assert_eq!(f1, f2);
        assert!((s.triple.pair(&f1) - 1.0).abs() < 1e-10);
        let uniform = vec![1.0; 3];
        let v = m.apply_v(&uniform, f64::INFINITY).unwrap();
        assert!(k1 <= s.triple.pair(&v) + 1e-12);
    }
}
