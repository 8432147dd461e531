//! Dormand–Prince 5(4) with embedded error control, stepping exactly onto a
//! caller-supplied checkpoint grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; chosen heuristically when absent.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            initial_step: None,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    /// Largest normalized error estimate among accepted steps.
    pub max_error_estimate: f64,
    /// Number of accepted steps whose state had to be projected back by
    /// the post-step hook.
    pub projections: u64,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Outcome of the post-step projection hook.
pub enum Projection {
    Unchanged,
    Projected,
}

/// Integrates `y' = rhs(t, y)` from `t = checkpoints[0]` and returns the
/// state at every checkpoint (the first entry is `y0`).
///
/// `project` runs after each accepted step and may modify the state, e.g.
/// clamp into an invariant box; it can also abort by returning an error.
pub fn integrate<F, P>(
    mut rhs: F,
    y0: &[f64],
    checkpoints: &[f64],
    opts: &OdeOptions,
    mut project: P,
) -> Result<(Vec<Vec<f64>>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    P: FnMut(f64, &mut [f64]) -> Result<Projection>,
{
    assert!(!checkpoints.is_empty(), "at least one checkpoint required");
    let dim = y0.len();
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(checkpoints.len());
    out.push(y0.to_vec());
    if checkpoints.len() == 1 {
        return Ok((out, stats));
    }

    let mut t = checkpoints[0];
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    rhs(t, &y, &mut k[0]);

    let mut h = match opts.initial_step {
        Some(h) => h,
        None => initial_step(&y, &k[0], opts),
    };
    let mut steps = 0usize;

    for &target in &checkpoints[1..] {
        while t < target {
            if steps >= opts.max_steps {
                return Err(Error::StepUnderflow { t });
            }
            steps += 1;
            let remaining = target - t;
            let last = h >= remaining;
            let h_try = if last { remaining } else { h };
            if !last && step_vanishes(t, h_try) {
                return Err(Error::StepUnderflow { t });
            }

            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += A[s][j] * k[j][i];
                    }
                    stage[i] = y[i] + h_try * acc;
                }
                rhs(t + C[s] * h_try, &stage, &mut k[s]);
            }
            // stage 7 is evaluated at the fifth-order solution (FSAL)
            y_new.copy_from_slice(&stage);

            let mut err_sq = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for j in 0..7 {
                    e += E[j] * k[j][i];
                }
                e *= h_try;
                let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc).powi(2);
            }
            let err = if dim == 0 { 0.0 } else { (err_sq / dim as f64).sqrt() };

            if err <= 1.0 {
                t = if last { target } else { t + h_try };
                std::mem::swap(&mut y, &mut y_new);
                stats.accepted += 1;
                stats.max_error_estimate = stats.max_error_estimate.max(err);
                match project(t, &mut y)? {
                    Projection::Unchanged => {
                        let (first, rest) = k.split_at_mut(1);
                        first[0].copy_from_slice(&rest[5]);
                    }
                    Projection::Projected => {
                        stats.projections += 1;
                        rhs(t, &y, &mut k[0]);
                    }
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // keep the natural step when the last one was shortened to hit a checkpoint
                if !last || h_try * factor > h {
                    h = h_try * factor;
                }
            } else {
                stats.rejected += 1;
                let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                h = h_try * factor;
                if step_vanishes(t, h) {
                    return Err(Error::StepUnderflow { t });
                }
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

/// A step is lost once it no longer moves `t` by more than a few ulps.
fn step_vanishes(t: f64, h: f64) -> bool {
    !(h > 4.0 * f64::EPSILON * t.abs() && h > 1e-300)
}

fn initial_step(y: &[f64], dy: &[f64], opts: &OdeOptions) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(dy) {
        let sc = opts.atol + opts.rtol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let n = y.len().max(1) as f64;
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        (0.01 * d0 / d1).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_projection(_: f64, _: &mut [f64]) -> Result<Projection> {
        Ok(Projection::Unchanged)
    }

    #[test]
    fn exponential_decay() {
        let (ys, stats) = integrate(
            |_, y, dy| dy[0] = -y[0],
            &[1.0],
            &[0.0, 1.0, 10.0],
            &OdeOptions::default(),
            no_projection,
        )
        .unwrap();
        assert!((ys[1][0] - (-1.0_f64).exp()).abs() < 1e-9);
        assert!((ys[2][0] - (-10.0_f64).exp()).abs() < 1e-12);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn riccati_matches_closed_form() {
        // u' = -u^2 / 2, u0 = 1 -> u = 2 / (t + 2)
        let times: Vec<f64> = (0..=10).map(|k| 2f64.powi(k)).collect();
        let mut grid = vec![0.0];
        grid.extend(times.iter().copied());
        let (ys, _) = integrate(|_, y, dy| dy[0] = -0.5 * y[0] * y[0], &[1.0], &grid, &OdeOptions::default(), no_projection).unwrap();
        for (t, y) in grid.iter().zip(&ys) {
            let exact = 2.0 / (t + 2.0);
            assert!((y[0] - exact).abs() <= 1e-8 * exact, "t={t}");
        }
    }

    #[test]
    fn harmonic_oscillator_two_components() {
        let (ys, _) = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[1.0, 0.0],
            &[0.0, std::f64::consts::PI],
            &OdeOptions::default(),
            no_projection,
        )
        .unwrap();
        assert!((ys[1][0] + 1.0).abs() < 1e-8);
        assert!(ys[1][1].abs() < 1e-8);
    }

    #[test]
    fn single_checkpoint_returns_initial_state() {
        let (ys, stats) = integrate(|_, _, dy| dy[0] = 1.0, &[2.0], &[0.0], &OdeOptions::default(), no_projection).unwrap();
        assert_eq!(ys, vec![vec![2.0]]);
        assert_eq!(stats.accepted, 0);
    }
}
