//! The nonlinear flows `u' = Lu - A[u]` (particles) and `V' = LV - J[V]`
//! (superprocesses), optionally carrying the immigration integral as an
//! extra state component.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::model::{Immigration, Model};
use crate::numerics::ode::{integrate, OdeOptions, Projection, StepStats};
use crate::spectral::{Criticality, MeanGenerator, Spectrum};

/// Clamps beyond this distance from the invariant box are faults.
pub const CLAMP_FAULT: f64 = 1e-10;

/// Base rungs of the survival ladder and the largest extension rung.
pub const THETA_LADDER: [f64; 4] = [1e2, 1e3, 1e4, 1e5];
pub const THETA_MAX: f64 = 1e12;
pub const LADDER_TOL: f64 = 1e-8;

struct Flow<'a> {
    model: &'a Model,
    l: Vec<f64>,
    n: usize,
    imm: Option<&'a Immigration>,
    buf: Vec<f64>,
}

impl<'a> Flow<'a> {
    fn new(model: &'a Model, gen: &MeanGenerator, imm: Option<&'a Immigration>) -> Self {
        let n = model.n();
        let l = (0..n * n).map(|k| gen.l[(k / n, k % n)]).collect();
        Self {
            model,
            l,
            n,
            imm,
            buf: vec![0.0; n],
        }
    }

    fn rhs(&mut self, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let state = &y[..n];
        self.model.remainder_unchecked(state, &mut self.buf);
        for x in 0..n {
            let row = &self.l[x * n..(x + 1) * n];
            let lin: f64 = row.iter().zip(state).map(|(a, b)| a * b).sum();
            dy[x] = lin - self.buf[x];
        }
        if let Some(imm) = self.imm {
            dy[n] = match imm {
                Immigration::Particle(law) => law.h_u(state),
                Immigration::Super(law) => law.chi(state),
            };
        }
    }
}

fn check_grid(checkpoints: &[f64]) -> Result<()> {
    if checkpoints.first() != Some(&0.0) {
        return Err(Error::InvalidInput("checkpoints must start at t = 0".into()));
    }
    if checkpoints.windows(2).any(|w| !(w[1] > w[0])) || checkpoints.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("checkpoints must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Integrates the flow with the box projection; returns raw states.
fn run(
    model: &Model,
    gen: &MeanGenerator,
    imm: Option<&Immigration>,
    y0: Vec<f64>,
    checkpoints: &[f64],
    opts: &OdeOptions,
) -> Result<(Vec<Vec<f64>>, StepStats)> {
    let n = model.n();
    let upper = if model.is_branching() { 1.0 } else { f64::INFINITY };
    let mut flow = Flow::new(model, gen, imm);
    integrate(
        |_, y, dy| flow.rhs(y, dy),
        &y0,
        checkpoints,
        opts,
        |t, y| {
            let mut projected = false;
            for v in y[..n].iter_mut() {
                let excess = if *v < 0.0 {
                    -*v
                } else if *v > upper {
                    *v - upper
                } else {
                    continue;
                };
                if !(excess <= CLAMP_FAULT) {
                    return Err(Error::ClampFault { t, excess });
                }
                *v = v.clamp(0.0, upper);
                projected = true;
            }
            Ok(if projected { Projection::Projected } else { Projection::Unchanged })
        },
    )
}

fn trajectory(channel: &str, checkpoints: &[f64], values: Vec<Vec<f64>>, stats: StepStats) -> Trajectory {
    Trajectory {
        channel: channel.to_string(),
        times: checkpoints.to_vec(),
        values,
        vectors: BTreeMap::new(),
        scalars: BTreeMap::new(),
        step_stats: stats,
    }
}

/// `u_t[g]` from `u_0 = 1 - g`, with `g` the multiplicative datum in
/// `[0,1]^n`; `g = 0` gives the survival function `P_x(zeta > t)`.
pub fn solve_u(model: &Model, gen: &MeanGenerator, g0: &[f64], checkpoints: &[f64], opts: &OdeOptions) -> Result<Trajectory> {
    if !model.is_branching() {
        return Err(Error::InvalidInput("solve_u needs a branching particle model".into()));
    }
    model.ensure_valid()?;
    check_grid(checkpoints)?;
    if g0.len() != model.n() || g0.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
        return Err(Error::InvalidInput("g0 must lie in [0, 1]^n".into()));
    }
    let y0: Vec<f64> = g0.iter().map(|g| 1.0 - g).collect();
    let (values, stats) = run(model, gen, None, y0, checkpoints, opts)?;
    Ok(trajectory("u", checkpoints, values, stats))
}

/// `V_t[f]` from `V_0 = f`.
pub fn solve_v(model: &Model, gen: &MeanGenerator, f0: &[f64], checkpoints: &[f64], opts: &OdeOptions) -> Result<Trajectory> {
    if model.is_branching() {
        return Err(Error::InvalidInput("solve_v needs a superprocess model".into()));
    }
    model.ensure_valid()?;
    check_grid(checkpoints)?;
    crate::model::check_nonnegative_vector("f0", f0, model.n())?;
    if f0.iter().any(|v| v.is_infinite()) {
        return Err(Error::InvalidInput("f0 must be finite; use the survival ladder for infinite data".into()));
    }
    let (values, stats) = run(model, gen, None, f0.to_vec(), checkpoints, opts)?;
    Ok(trajectory("V", checkpoints, values, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub probability: Vec<f64>,
    /// `u_t` (particles) or the ladder limit `V̄_t` (superprocesses).
    pub profile: Vec<Vec<f64>>,
    /// Accepted ladder rung and the Cauchy difference behind it.
    pub theta: Option<f64>,
    pub ladder_difference: Option<f64>,
}

/// Survival probabilities `P_mu(zeta > t)` at every checkpoint; the ladder
/// is judged at checkpoints `>= t_min`.
pub fn survival_curve(
    model: &Model,
    gen: &MeanGenerator,
    mu: &[f64],
    checkpoints: &[f64],
    t_min: f64,
    opts: &OdeOptions,
) -> Result<SurvivalCurve> {
    crate::model::check_nonnegative_vector("mu", mu, model.n())?;
    if model.is_branching() {
        if mu.iter().any(|m| m.fract() != 0.0 || m.is_infinite()) {
            return Err(Error::InvalidInput("particle configurations need integer counts".into()));
        }
        let tr = solve_u(model, gen, &vec![0.0; model.n()], checkpoints, opts)?;
        let probability = tr.values.iter().map(|u| survival_from_u(u, mu)).collect();
        return Ok(SurvivalCurve {
            times: checkpoints.to_vec(),
            probability,
            profile: tr.values,
            theta: None,
            ladder_difference: None,
        });
    }
    model.ensure_valid()?;
    check_grid(checkpoints)?;
    let judged: Vec<usize> = (0..checkpoints.len()).filter(|&k| checkpoints[k] >= t_min && checkpoints[k] > 0.0).collect();
    let n = model.n();
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut last_diff = f64::INFINITY;
    let mut theta = THETA_LADDER[0];
    while theta <= THETA_MAX * (1.0 + 1e-12) {
        let ode = OdeOptions {
            initial_step: Some(1e-6 / theta),
            ..*opts
        };
        let (values, _) = run(model, gen, None, vec![theta; n], checkpoints, &ode)?;
        if let Some(prev) = &previous {
            let diff = judged
                .iter()
                .flat_map(|&k| prev[k].iter().zip(&values[k]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            last_diff = diff;
            if diff < LADDER_TOL {
                let probability = values.iter().map(|v| -(-mass_pairing(v, mu)).exp_m1()).collect();
                return Ok(SurvivalCurve {
                    times: checkpoints.to_vec(),
                    probability,
                    profile: values,
                    theta: Some(theta),
                    ladder_difference: Some(diff),
                });
            }
        }
        previous = Some(values);
        theta *= 10.0;
    }
    Err(Error::LadderNotConverged {
        theta: theta / 10.0,
        difference: last_diff,
    })
}

pub fn survival_probability(model: &Model, gen: &MeanGenerator, mu: &[f64], t: f64, opts: &OdeOptions) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time {t} must be finite and nonnegative")));
    }
    if mu.iter().all(|m| *m == 0.0) {
        crate::model::check_nonnegative_vector("mu", mu, model.n())?;
        return Ok(0.0);
    }
    if t == 0.0 {
        crate::model::check_nonnegative_vector("mu", mu, model.n())?;
        return Ok(1.0);
    }
    let curve = survival_curve(model, gen, mu, &[0.0, t], t, opts)?;
    Ok(curve.probability[1])
}

/// `1 - prod (1 - u(x))^{mu(x)}`.
pub fn survival_from_u(u: &[f64], mu: &[f64]) -> f64 {
    let log_extinct: f64 = u.iter().zip(mu).filter(|(_, m)| **m > 0.0).map(|(u, m)| m * (-u).ln_1p()).sum();
    -log_extinct.exp_m1()
}

fn mass_pairing(v: &[f64], mu: &[f64]) -> f64 {
    v.iter().zip(mu).map(|(a, b)| a * b).sum()
}

/// Log-Laplace functional with immigration. The primary channel is `v`
/// (resp. `V`), the scalar `I` is the accumulated immigration integral and
/// the vector `w` (resp. `W`) is `v + I`.
pub fn immigration_log_laplace(
    model: &Model,
    gen: &MeanGenerator,
    imm: &Immigration,
    f: &[f64],
    checkpoints: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    model.ensure_valid()?;
    imm.matches(model.is_branching())?;
    imm.ensure_valid(model.n())?;
    check_grid(checkpoints)?;
    crate::model::check_nonnegative_vector("f", f, model.n())?;
    if f.iter().any(|v| v.is_infinite()) {
        return Err(Error::InvalidInput("f must be finite".into()));
    }
    let n = model.n();
    let mut y0: Vec<f64> = if model.is_branching() { f.iter().map(|v| -(-v).exp_m1()).collect() } else { f.to_vec() };
    y0.push(0.0);
    let (states, stats) = run(model, gen, Some(imm), y0, checkpoints, opts)?;
    let branching = model.is_branching();
    let primary: Vec<Vec<f64>> = states
        .iter()
        .map(|s| if branching { s[..n].iter().map(|u| -(-u).ln_1p()).collect() } else { s[..n].to_vec() })
        .collect();
    let integral: Vec<f64> = states.iter().map(|s| s[n]).collect();
    let full: Vec<Vec<f64>> = primary.iter().zip(&integral).map(|(v, i)| v.iter().map(|x| x + i).collect()).collect();
    let mut tr = trajectory(if branching { "v" } else { "V" }, checkpoints, primary, stats);
    tr.vectors.insert(if branching { "w" } else { "W" }.into(), full);
    if branching {
        tr.vectors.insert("u".into(), states.iter().map(|s| s[..n].to_vec()).collect());
    }
    tr.scalars.insert("I".into(), integral);
    Ok(tr)
}

/// `E exp(-<f, Y_t>)` for the immigration process started from `mu`, at
/// checkpoint `k` of an [`immigration_log_laplace`] trajectory.
pub fn laplace_at(tr: &Trajectory, mu: &[f64], k: usize) -> f64 {
    let i = tr.scalars["I"][k];
    (-(mass_pairing(&tr.values[k], mu) + i)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryLaplace {
    /// `∫_0^T H[v_s] ds` (resp. with `chi`).
    pub integral: f64,
    /// Certified bound on the neglected `∫_T^∞`.
    pub tail_bound: f64,
    pub horizon: f64,
    /// `exp(-integral)`; the exact value lies in `[laplace e^{-tail_bound}, laplace]`.
    pub laplace: f64,
}

pub const STATIONARY_START: f64 = 40.0;
pub const STATIONARY_DOUBLINGS: usize = 12;

/// `∫_0^∞ H[v_s[f]] ds` and the stationary Laplace functional
/// `E exp(-<f, Y_∞>)`, integrated until the certified tail bound drops
/// below `tail_tol`.
pub fn stationary_log_laplace(
    model: &Model,
    spectrum: &Spectrum,
    imm: &Immigration,
    f: &[f64],
    tail_tol: f64,
    opts: &OdeOptions,
) -> Result<StationaryLaplace> {
    if spectrum.criticality != Criticality::Subcritical {
        return Err(Error::NotApplicable("a stationary law needs a subcritical model".into()));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::InvalidInput(format!("tail tolerance {tail_tol} must be positive")));
    }
    model.ensure_valid()?;
    imm.matches(model.is_branching())?;
    imm.ensure_valid(model.n())?;
    crate::model::check_nonnegative_vector("f", f, model.n())?;
    let phi = &spectrum.triple.phi;
    if imm.weighted_log_moment(phi).value.is_infinite() {
        return Err(Error::NoStationaryLaw);
    }
    if f.iter().all(|v| *v == 0.0) {
        return Ok(StationaryLaplace {
            integral: 0.0,
            tail_bound: 0.0,
            horizon: 0.0,
            laplace: 1.0,
        });
    }
    let n = model.n();
    let branching = model.is_branching();
    let rate = -spectrum.triple.lambda;
    let mut state: Vec<f64> = if branching { f.iter().map(|v| -(-v).exp_m1()).collect() } else { f.to_vec() };
    state.push(0.0);
    let mut t = 0.0;
    let mut horizon = STATIONARY_START;
    let mut bound = f64::INFINITY;
    for _ in 0..=STATIONARY_DOUBLINGS {
        let (states, _) = run(model, &spectrum.generator, Some(imm), state.clone(), &[t, horizon], opts)?;
        state = states.into_iter().nth(1).expect("two checkpoints");
        t = horizon;
        let v: Vec<f64> = if branching { state[..n].iter().map(|u| -(-u).ln_1p()).collect() } else { state[..n].to_vec() };
        let z = v.iter().zip(phi).map(|(a, b)| a / b).fold(0.0, f64::max);
        bound = imm.integral_bound(phi, z) / rate;
        if bound < tail_tol {
            let integral = state[n];
            return Ok(StationaryLaplace {
                integral,
                tail_bound: bound,
                horizon,
                laplace: (-integral).exp(),
            });
        }
        horizon *= 2.0;
    }
    Err(Error::TailNotCertified { bound, horizon: t })
}
