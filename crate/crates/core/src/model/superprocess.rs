use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_motion, check_nonnegative_vector, check_rates, exp_remainder, Diagnostics, TypeSpace, PROB_TOL};
use crate::error::{Error, Result};

/// Local jump atom of the branching mechanism: intensity `weight` of mass
/// jumps of size `y` at the current type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuAtom {
    pub weight: f64,
    pub y: f64,
}

/// Non-local offspring atom: intensity `weight` of depositing `measure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaAtom {
    pub weight: f64,
    pub measure: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperModel {
    pub space: TypeSpace,
    pub motion: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub nu: Vec<Vec<NuAtom>>,
    pub beta: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    pub gamma_atoms: Vec<Vec<GammaAtom>>,
}

impl SuperModel {
    /// Quadratic-only mechanism `psi(x, z) = -b z + c z^2` without motion.
    pub fn feller(b: Vec<f64>, c: Vec<f64>) -> Self {
        let n = b.len();
        Self {
            space: TypeSpace::new(n),
            motion: vec![vec![0.0; n]; n],
            b,
            c,
            nu: vec![Vec::new(); n],
            beta: vec![0.0; n],
            gamma: vec![vec![0.0; n]; n],
            gamma_atoms: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn validate(&self) -> Diagnostics {
        let n = self.space.n;
        let mut diag = Diagnostics::default();
        if n == 0 {
            diag.violation("type space is empty".into(), None, None);
            return diag;
        }
        check_motion(&self.motion, n, &mut diag);
        check_rates("b", &self.b, n, false, &mut diag);
        check_rates("c", &self.c, n, true, &mut diag);
        check_rates("beta", &self.beta, n, true, &mut diag);
        for (name, len) in [("nu", self.nu.len()), ("gamma", self.gamma.len()), ("Gamma", self.gamma_atoms.len())] {
            if len != n {
                diag.violation(format!("{name} given for {len} types, expected {n}"), None, None);
            }
        }
        if !diag.is_admissible() {
            return diag;
        }
        let mut second = 0.0_f64;
        for x in 0..n {
            let mut moment = 2.0 * self.c[x];
            for (i, a) in self.nu[x].iter().enumerate() {
                if !(a.weight >= 0.0 && a.weight.is_finite()) || !(a.y > 0.0 && a.y.is_finite()) {
                    diag.violation(format!("nu atom {i} of type {x} needs weight >= 0 and y > 0"), Some(x), Some(i));
                }
                moment += a.weight * a.y * a.y;
            }
            let row = &self.gamma[x];
            let mut mass = 0.0;
            if row.len() != n {
                diag.violation(format!("gamma row {x} has {} entries, expected {n}", row.len()), Some(x), None);
            } else {
                if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    diag.violation(format!("gamma row {x} has a negative or non-finite entry"), Some(x), None);
                }
                mass += row.iter().sum::<f64>();
            }
            for (i, a) in self.gamma_atoms[x].iter().enumerate() {
                if !(a.weight >= 0.0 && a.weight.is_finite()) {
                    diag.violation(format!("Gamma atom {i} of type {x} has weight {}", a.weight), Some(x), Some(i));
                }
                if a.measure.len() != n || a.measure.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    diag.violation(format!("Gamma atom {i} of type {x} needs a nonnegative measure of length {n}"), Some(x), Some(i));
                    continue;
                }
                let total: f64 = a.measure.iter().sum();
                if total == 0.0 {
                    diag.violation(format!("Gamma atom {i} of type {x} has the zero measure"), Some(x), Some(i));
                }
                mass += a.weight * total;
                moment += self.beta[x] * a.weight * total * total;
            }
            if mass > 1.0 + PROB_TOL {
                diag.violation(
                    format!("mass constraint violated in row {x}: gamma row plus Gamma mass is {mass} > 1"),
                    Some(x),
                    None,
                );
            }
            second = second.max(moment);
        }
        diag.second_moment_sup = second;
        diag
    }

    /// `gamma[x][y] + sum weight * measure[y]`.
    pub fn mean_matrix(&self) -> Result<DMatrix<f64>> {
        self.validate().into_result()?;
        let n = self.n();
        let mut m = DMatrix::from_fn(n, n, |x, y| self.gamma[x][y]);
        for (x, atoms) in self.gamma_atoms.iter().enumerate() {
            for a in atoms {
                for y in 0..n {
                    m[(x, y)] += a.weight * a.measure[y];
                }
            }
        }
        Ok(m)
    }

    pub fn apply_j(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.validate().into_result()?;
        check_nonnegative_vector("h", h, self.n())?;
        let mut out = vec![0.0; self.n()];
        self.j_into(h, &mut out);
        Ok(out)
    }

    pub(crate) fn j_into(&self, h: &[f64], out: &mut [f64]) {
        for x in 0..self.n() {
            let hx = h[x];
            let mut acc = self.c[x] * hx * hx;
            for a in &self.nu[x] {
                acc += a.weight * exp_remainder(hx * a.y);
            }
            let mut nonlocal = 0.0;
            for a in &self.gamma_atoms[x] {
                nonlocal += a.weight * exp_remainder(dot(h, &a.measure));
            }
            out[x] = acc + self.beta[x] * nonlocal;
        }
    }

    pub fn apply_v(&self, f: &[f64], truncation: f64) -> Result<Vec<f64>> {
        self.validate().into_result()?;
        check_nonnegative_vector("f", f, self.n())?;
        if !(truncation > 0.0) {
            return Err(Error::InvalidInput(format!("truncation level {truncation} must be positive")));
        }
        let mut out = vec![0.0; self.n()];
        self.v_into(f, truncation, &mut out);
        Ok(out)
    }

    pub(crate) fn v_into(&self, f: &[f64], truncation: f64, out: &mut [f64]) {
        for x in 0..self.n() {
            let mut local = 2.0 * self.c[x];
            for a in &self.nu[x] {
                if a.y <= truncation {
                    local += a.weight * a.y * a.y;
                }
            }
            let mut nonlocal = 0.0;
            for a in &self.gamma_atoms[x] {
                if a.measure.iter().sum::<f64>() <= truncation {
                    let p = dot(f, &a.measure);
                    nonlocal += a.weight * p * p;
                }
            }
            out[x] = local * f[x] * f[x] + self.beta[x] * nonlocal;
        }
    }

    pub(crate) fn v_forms(&self) -> Vec<DMatrix<f64>> {
        let n = self.n();
        (0..n)
            .map(|x| {
                let mut w = DMatrix::zeros(n, n);
                w[(x, x)] = 2.0 * self.c[x] + self.nu[x].iter().map(|a| a.weight * a.y * a.y).sum::<f64>();
                for a in &self.gamma_atoms[x] {
                    for i in 0..n {
                        for j in 0..n {
                            w[(i, j)] += self.beta[x] * a.weight * a.measure[i] * a.measure[j];
                        }
                    }
                }
                w
            })
            .collect()
    }

    pub fn largest_atom_mass(&self) -> f64 {
        let local = self.nu.iter().flatten().filter(|a| a.weight > 0.0).map(|a| a.y);
        let nonlocal = self
            .gamma_atoms
            .iter()
            .flatten()
            .filter(|a| a.weight > 0.0)
            .map(|a| a.measure.iter().sum::<f64>());
        local.chain(nonlocal).fold(0.0, f64::max)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
