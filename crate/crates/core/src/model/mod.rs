//! Finite-type models: branching Markov processes, superprocesses and their
//! immigration laws, with the exact pointwise operators each one defines.
//!
//! Types are indexed `0..n`. Motion is a rate matrix whose row deficit is
//! the killing rate; the cemetery state is never stored, so every function
//! on types implicitly vanishes there.

mod branching;
mod immigration;
pub(crate) mod log_tail;
mod superprocess;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use branching::{BranchingModel, OffspringAtom};
pub use immigration::{ArrivalAtom, ArrivalLaw, Immigration, ImmigrationLaw, LogTailLaw, MassAtom, SpImmigrationLaw};
pub use log_tail::SeriesValue;
pub use superprocess::{GammaAtom, NuAtom, SuperModel};

/// Tolerance for sum-to-one checks on probabilities parsed from decimals.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpace {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl TypeSpace {
    pub fn new(n: usize) -> Self {
        Self { n, labels: None }
    }
}

/// A single admissibility failure, located by type and atom where possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub type_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_index: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    /// `sup_x E_x[N^2]` for particle models, the matching second-moment
    /// integral for superprocesses.
    pub second_moment_sup: f64,
}

impl Diagnostics {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub(crate) fn violation(&mut self, message: String, type_index: Option<usize>, atom_index: Option<usize>) {
        self.violations.push(Violation {
            message,
            type_index,
            atom_index,
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            let joined: Vec<_> = self.violations.iter().map(|v| v.message.clone()).collect();
            Err(Error::InvalidModel(joined.join("; ")))
        }
    }
}

/// Shared checks on a motion rate matrix.
pub(crate) fn check_motion(motion: &[Vec<f64>], n: usize, diag: &mut Diagnostics) {
    if motion.len() != n {
        diag.violation(format!("motion matrix has {} rows, expected {n}", motion.len()), None, None);
        return;
    }
    for (x, row) in motion.iter().enumerate() {
        if row.len() != n {
            diag.violation(format!("motion row {x} has {} entries, expected {n}", row.len()), Some(x), None);
            continue;
        }
        if row.iter().any(|v| !v.is_finite()) {
            diag.violation(format!("motion row {x} has a non-finite rate"), Some(x), None);
            continue;
        }
        for (y, &q) in row.iter().enumerate() {
            if y != x && q < 0.0 {
                diag.violation(format!("negative jump rate {q} from type {x} to {y}"), Some(x), None);
            }
        }
        let sum: f64 = row.iter().sum();
        let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if sum > PROB_TOL * scale {
            diag.violation(format!("motion row {x} sums to {sum} > 0"), Some(x), None);
        }
    }
}

pub(crate) fn check_rates(name: &str, values: &[f64], n: usize, nonnegative: bool, diag: &mut Diagnostics) {
    if values.len() != n {
        diag.violation(format!("{name} has {} entries, expected {n}", values.len()), None, None);
        return;
    }
    for (x, &v) in values.iter().enumerate() {
        if !v.is_finite() || (nonnegative && v < 0.0) {
            diag.violation(format!("{name}[{x}] = {v} is not admissible"), Some(x), None);
        }
    }
}

pub(crate) fn check_nonnegative_vector(what: &str, f: &[f64], n: usize) -> Result<()> {
    if f.len() != n {
        return Err(Error::InvalidInput(format!("{what} has length {}, expected {n}", f.len())));
    }
    if let Some((x, v)) = f.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || v.is_nan()) {
        return Err(Error::InvalidInput(format!("{what}[{x}] = {v} is negative")));
    }
    Ok(())
}

/// `e^{-x} - 1 + x` without cancellation for small `x >= 0`.
pub(crate) fn exp_remainder(x: f64) -> f64 {
    if x < 0.5 {
        // alternating series; 20 terms give full precision for x < 0.5
        let mut term = x * x / 2.0;
        let mut sum = term;
        for k in 3..24 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

/// Either kind of branching model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Branching(BranchingModel),
    Super(SuperModel),
}

impl Model {
    pub fn n(&self) -> usize {
        match self {
            Model::Branching(m) => m.space.n,
            Model::Super(m) => m.space.n,
        }
    }

    pub fn validate(&self) -> Diagnostics {
        match self {
            Model::Branching(m) => m.validate(),
            Model::Super(m) => m.validate(),
        }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().into_result()
    }

    pub fn motion(&self) -> &[Vec<f64>] {
        match self {
            Model::Branching(m) => &m.motion,
            Model::Super(m) => &m.motion,
        }
    }

    pub fn beta(&self) -> &[f64] {
        match self {
            Model::Branching(m) => &m.beta,
            Model::Super(m) => &m.beta,
        }
    }

    pub fn mean_matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            Model::Branching(m) => m.mean_matrix(),
            Model::Super(m) => m.mean_matrix(),
        }
    }

    /// `V_M[f]`; pass `f64::INFINITY` for the untruncated `V[f]`.
    pub fn apply_v(&self, f: &[f64], truncation: f64) -> Result<Vec<f64>> {
        match self {
            Model::Branching(m) => m.apply_v(f, truncation),
            Model::Super(m) => m.apply_v(f, truncation),
        }
    }

    pub(crate) fn v_unchecked(&self, f: &[f64], truncation: f64, out: &mut [f64]) {
        match self {
            Model::Branching(m) => m.v_into(f, truncation, out),
            Model::Super(m) => m.v_into(f, truncation, out),
        }
    }

    /// Symmetric matrices `W_x` with `V[f](x) = f^T W_x f`.
    pub fn v_forms(&self) -> Vec<DMatrix<f64>> {
        match self {
            Model::Branching(m) => m.v_forms(),
            Model::Super(m) => m.v_forms(),
        }
    }

    /// Largest family size (particles) or largest atom mass (superprocess):
    /// the smallest truncation level for which `V_M = V`.
    pub fn largest_family(&self) -> f64 {
        match self {
            Model::Branching(m) => m.largest_family() as f64,
            Model::Super(m) => m.largest_atom_mass(),
        }
    }

    /// The nonlinear remainder operator: `A` for particles, `J` for
    /// superprocesses.
    pub(crate) fn remainder_unchecked(&self, g: &[f64], out: &mut [f64]) {
        match self {
            Model::Branching(m) => m.a_into(g, out),
            Model::Super(m) => m.j_into(g, out),
        }
    }

    pub fn is_branching(&self) -> bool {
        matches!(self, Model::Branching(_))
    }
}
