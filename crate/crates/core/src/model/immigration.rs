use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::log_tail::{SeriesValue, TailFn, TailTable};
use super::superprocess::dot;
use super::{check_nonnegative_vector, Diagnostics, PROB_TOL};
use crate::error::{Error, Result};

/// One immigration outcome: with probability `prob` the particles listed in
/// `arrivals` (type indices) enter together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalAtom {
    pub prob: f64,
    pub arrivals: Vec<usize>,
}

impl ArrivalAtom {
    pub fn new(prob: f64, arrivals: impl Into<Vec<usize>>) -> Self {
        Self {
            prob,
            arrivals: arrivals.into(),
        }
    }
}

/// `N` arrivals of type `type_index` with `P(N = k) ∝ 1/(k ln(k+2)^(p+1))`.
///
/// Normalizable for every `p > 0`; `E ln(1+N) < ∞` iff `p > 1`; `E N = ∞`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogTailLaw {
    pub p: f64,
    pub type_index: usize,
    #[serde(skip)]
    table: OnceLock<Arc<TailTable>>,
}

impl PartialEq for LogTailLaw {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.type_index == other.type_index
    }
}

impl LogTailLaw {
    pub fn new(p: f64, type_index: usize) -> Self {
        Self {
            p,
            type_index,
            table: OnceLock::new(),
        }
    }

    pub(crate) fn table(&self) -> &TailTable {
        self.table.get_or_init(|| Arc::new(TailTable::new(self.p)))
    }

    /// `E[1 - e^{-cN}]` for `c = e^{ln_c}`.
    pub fn laplace_complement(&self, ln_c: f64) -> SeriesValue {
        self.table().expectation(TailFn::Laplace { ln_c })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalLaw {
    Atoms(Vec<ArrivalAtom>),
    LogTail(LogTailLaw),
}

/// Poisson(alpha) immigration of particle batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmigrationLaw {
    pub alpha: f64,
    pub law: ArrivalLaw,
}

impl ImmigrationLaw {
    pub fn atoms(alpha: f64, atoms: Vec<ArrivalAtom>) -> Self {
        Self {
            alpha,
            law: ArrivalLaw::Atoms(atoms),
        }
    }

    pub fn log_tail(alpha: f64, p: f64, type_index: usize) -> Self {
        Self {
            alpha,
            law: ArrivalLaw::LogTail(LogTailLaw::new(p, type_index)),
        }
    }

    pub fn validate(&self, n: usize) -> Diagnostics {
        let mut diag = Diagnostics::default();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            diag.violation(format!("immigration rate alpha = {} is not admissible", self.alpha), None, None);
        }
        match &self.law {
            ArrivalLaw::Atoms(atoms) => {
                if atoms.is_empty() {
                    diag.violation("immigration law has no atoms".into(), None, None);
                }
                let mut total = 0.0;
                for (i, a) in atoms.iter().enumerate() {
                    if !(a.prob >= 0.0 && a.prob.is_finite()) {
                        diag.violation(format!("immigration atom {i} has probability {}", a.prob), None, Some(i));
                    }
                    if a.arrivals.is_empty() {
                        diag.violation(format!("immigration atom {i} has no arrivals"), None, Some(i));
                    }
                    if let Some(&c) = a.arrivals.iter().find(|&&c| c >= n) {
                        diag.violation(format!("immigration atom {i} names type {c} >= {n}"), Some(c), Some(i));
                    }
                    total += a.prob;
                }
                if !atoms.is_empty() && (total - 1.0).abs() > PROB_TOL {
                    diag.violation(format!("immigration probabilities sum to {total}"), None, None);
                }
            }
            ArrivalLaw::LogTail(t) => {
                if !(t.p > 0.0 && t.p.is_finite()) {
                    diag.violation(format!("log-tail exponent p = {} must be positive", t.p), None, None);
                }
                if t.type_index >= n {
                    diag.violation(format!("log-tail arrivals name type {} >= {n}", t.type_index), Some(t.type_index), None);
                }
            }
        }
        diag
    }

    /// `H[f] = alpha E[1 - exp(-<f, Z>)]`.
    pub fn apply_h(&self, f: &[f64]) -> Result<SeriesValue> {
        check_nonnegative_vector("f", f, f.len())?;
        Ok(match &self.law {
            ArrivalLaw::Atoms(atoms) => {
                let v: f64 = atoms
                    .iter()
                    .map(|a| a.prob * -(-a.arrivals.iter().map(|&y| f[y]).sum::<f64>()).exp_m1())
                    .sum();
                exact(self.alpha * v)
            }
            ArrivalLaw::LogTail(t) => {
                let s = t.laplace_complement(f[t.type_index].ln());
                scale(s, self.alpha)
            }
        })
    }

    /// `H` expressed through `u = 1 - e^{-v}`: `alpha E[1 - prod (1 - u(y_i))]`.
    pub(crate) fn h_u(&self, u: &[f64]) -> f64 {
        match &self.law {
            ArrivalLaw::Atoms(atoms) => {
                let v: f64 = atoms
                    .iter()
                    .map(|a| {
                        // q_j = 1 - prod_{i<=j} (1 - u_i), accumulated without cancellation
                        let mut q = 0.0;
                        for &y in &a.arrivals {
                            q += u[y] * (1.0 - q);
                        }
                        a.prob * q
                    })
                    .sum();
                self.alpha * v
            }
            ArrivalLaw::LogTail(t) => {
                let uj = u[t.type_index];
                if uj <= 0.0 {
                    return 0.0;
                }
                let c = -(-uj).ln_1p();
                self.alpha * t.laplace_complement(c.ln()).value
            }
        }
    }

    /// `H[z phi]` with `z = e^{ln_z}`, usable far below the underflow threshold.
    pub fn h_scaled(&self, phi: &[f64], ln_z: f64) -> SeriesValue {
        match &self.law {
            ArrivalLaw::Atoms(atoms) => {
                let z = ln_z.exp();
                let v: f64 = atoms
                    .iter()
                    .map(|a| a.prob * -(-z * a.arrivals.iter().map(|&y| phi[y]).sum::<f64>()).exp_m1())
                    .sum();
                exact(self.alpha * v)
            }
            ArrivalLaw::LogTail(t) => {
                let pj = phi[t.type_index];
                if pj <= 0.0 {
                    return exact(0.0);
                }
                scale(t.laplace_complement(ln_z + pj.ln()), self.alpha)
            }
        }
    }

    /// `alpha E<phi, Z>`.
    pub fn intensity(&self, phi: &[f64]) -> f64 {
        match &self.law {
            ArrivalLaw::Atoms(atoms) => {
                self.alpha * atoms.iter().map(|a| a.prob * a.arrivals.iter().map(|&y| phi[y]).sum::<f64>()).sum::<f64>()
            }
            ArrivalLaw::LogTail(t) => {
                if self.alpha == 0.0 || phi[t.type_index] == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `E ln(1 + <phi, Z>)` for a single batch (no `alpha` factor).
    pub fn log_moment(&self, phi: &[f64]) -> SeriesValue {
        match &self.law {
            ArrivalLaw::Atoms(atoms) => {
                exact(atoms.iter().map(|a| a.prob * a.arrivals.iter().map(|&y| phi[y]).sum::<f64>().ln_1p()).sum())
            }
            ArrivalLaw::LogTail(t) => t.table().expectation(TailFn::LogOnePlus { c: phi[t.type_index] }),
        }
    }

    /// Adds one batch of arrivals to `counts`; returns the batch size.
    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, counts: &mut [u64]) -> u64 {
        match &self.law {
            ArrivalLaw::Atoms(atoms) => {
                let a = pick(atoms.iter().map(|a| a.prob), rng);
                for &y in &atoms[a].arrivals {
                    counts[y] += 1;
                }
                atoms[a].arrivals.len() as u64
            }
            ArrivalLaw::LogTail(t) => {
                let k = t.table().sample(rng);
                counts[t.type_index] = counts[t.type_index].saturating_add(k);
                k
            }
        }
    }
}

/// Index drawn proportionally to `weights`; the last positive index absorbs
/// round-off.
pub(crate) fn pick<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let mut target = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if target < w {
                return i;
            }
            target -= w;
        }
    }
    last
}

fn exact(value: f64) -> SeriesValue {
    SeriesValue { value, error: 0.0 }
}

fn scale(s: SeriesValue, a: f64) -> SeriesValue {
    SeriesValue {
        value: a * s.value,
        error: a * s.error,
    }
}

/// Atom of the superprocess immigration kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassAtom {
    pub weight: f64,
    pub measure: Vec<f64>,
}

/// `chi[f] = <f, upsilon> + sum weight (1 - e^{-<f, measure>})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpImmigrationLaw {
    pub upsilon: Vec<f64>,
    #[serde(rename = "Upsilon", default)]
    pub atoms: Vec<MassAtom>,
}

impl SpImmigrationLaw {
    pub fn validate(&self, n: usize) -> Diagnostics {
        let mut diag = Diagnostics::default();
        if self.upsilon.len() != n || self.upsilon.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            diag.violation(format!("upsilon must be a nonnegative vector of length {n}"), None, None);
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if !(a.weight >= 0.0 && a.weight.is_finite()) {
                diag.violation(format!("Upsilon atom {i} has weight {}", a.weight), None, Some(i));
            }
            if a.measure.len() != n || a.measure.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                diag.violation(format!("Upsilon atom {i} needs a nonnegative measure of length {n}"), None, Some(i));
            } else if a.measure.iter().all(|v| *v == 0.0) {
                diag.violation(format!("Upsilon atom {i} has the zero measure"), None, Some(i));
            }
        }
        diag
    }

    pub fn apply_chi(&self, f: &[f64]) -> Result<f64> {
        check_nonnegative_vector("f", f, self.upsilon.len())?;
        Ok(self.chi(f))
    }

    pub(crate) fn chi(&self, f: &[f64]) -> f64 {
        dot(f, &self.upsilon) + self.atoms.iter().map(|a| a.weight * -(-dot(f, &a.measure)).exp_m1()).sum::<f64>()
    }

    pub fn chi_scaled(&self, phi: &[f64], ln_z: f64) -> f64 {
        let z = ln_z.exp();
        z * dot(phi, &self.upsilon) + self.atoms.iter().map(|a| a.weight * -(-z * dot(phi, &a.measure)).exp_m1()).sum::<f64>()
    }

    pub fn intensity(&self, phi: &[f64]) -> f64 {
        dot(phi, &self.upsilon) + self.atoms.iter().map(|a| a.weight * dot(phi, &a.measure)).sum::<f64>()
    }

    /// `sum weight ln(1 + <phi, measure>)`; the drift part never
    /// contributes to the log-moment condition.
    pub fn log_moment(&self, phi: &[f64]) -> f64 {
        self.atoms.iter().map(|a| a.weight * dot(phi, &a.measure).ln_1p()).sum()
    }
}

/// Immigration attached to either model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Immigration {
    Particle(ImmigrationLaw),
    Super(SpImmigrationLaw),
}

impl Immigration {
    pub fn validate(&self, n: usize) -> Diagnostics {
        match self {
            Immigration::Particle(l) => l.validate(n),
            Immigration::Super(l) => l.validate(n),
        }
    }

    pub fn ensure_valid(&self, n: usize) -> Result<()> {
        self.validate(n).into_result()
    }

    /// `H[z phi]` or `chi[z phi]` at `z = e^{ln_z}`.
    pub fn mechanism_scaled(&self, phi: &[f64], ln_z: f64) -> SeriesValue {
        match self {
            Immigration::Particle(l) => l.h_scaled(phi, ln_z),
            Immigration::Super(l) => exact(l.chi_scaled(phi, ln_z)),
        }
    }

    pub fn intensity(&self, phi: &[f64]) -> f64 {
        match self {
            Immigration::Particle(l) => l.intensity(phi),
            Immigration::Super(l) => l.intensity(phi),
        }
    }

    /// Rate-weighted log moment whose finiteness decides the integral test:
    /// `alpha E ln(1+<phi,Z>)` resp. `∫ ln(1+<phi,m>) Upsilon(dm)`.
    pub fn weighted_log_moment(&self, phi: &[f64]) -> SeriesValue {
        match self {
            Immigration::Particle(l) => scale(l.log_moment(phi), l.alpha),
            Immigration::Super(l) => exact(l.log_moment(phi)),
        }
    }

    /// Upper bound on `∫_0^z M[s phi] / s ds` for the mechanism `M = H`
    /// or `chi`, from `Ein(x) <= min(x, 2 ln(1 + x))`.
    pub fn integral_bound(&self, phi: &[f64], z: f64) -> f64 {
        let ein = |x: f64| x.min(2.0 * x.ln_1p());
        match self {
            Immigration::Particle(l) => match &l.law {
                ArrivalLaw::Atoms(atoms) => {
                    l.alpha * atoms.iter().map(|a| a.prob * ein(z * a.arrivals.iter().map(|&y| phi[y]).sum::<f64>())).sum::<f64>()
                }
                ArrivalLaw::LogTail(t) => {
                    let s = t.table().expectation(TailFn::LogOnePlus { c: z * phi[t.type_index] });
                    l.alpha * 2.0 * (s.value + s.error)
                }
            },
            Immigration::Super(l) => z * dot(phi, &l.upsilon) + l.atoms.iter().map(|a| a.weight * ein(z * dot(phi, &a.measure))).sum::<f64>(),
        }
    }

    pub fn matches(&self, model_is_branching: bool) -> Result<()> {
        match (self, model_is_branching) {
            (Immigration::Particle(_), true) | (Immigration::Super(_), false) => Ok(()),
            _ => Err(Error::InvalidInput("immigration kind does not match the model kind".into())),
        }
    }
}
