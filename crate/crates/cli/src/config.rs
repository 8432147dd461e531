//! Experiment configuration. Unknown fields are rejected everywhere.

use branchlab::limits::{default_schedule, default_theta_grid};
use branchlab::model::{Immigration, Model};
use branchlab::simulator::DEFAULT_POPULATION_CAP;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Check,
    Solve,
    Simulate,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    /// When present, the subcommand must match it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Command>,
    pub model: Model,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub immigration: Option<Immigration>,
    /// Initial configuration; one unit at type 0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    /// Test function; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ode: OdeConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl ExperimentConfig {
    pub fn mu(&self) -> Vec<f64> {
        self.mu.clone().unwrap_or_else(|| {
            let mut m = vec![0.0; self.model.n()];
            if let Some(x) = m.first_mut() {
                *x = 1.0;
            }
            m
        })
    }

    pub fn f(&self) -> Vec<f64> {
        self.f.clone().unwrap_or_else(|| vec![1.0; self.model.n()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        let d = branchlab::numerics::ode::OdeOptions::default();
        Self {
            rtol: d.rtol,
            atol: d.atol,
            max_steps: d.max_steps,
        }
    }
}

impl OdeConfig {
    pub fn options(&self) -> branchlab::numerics::ode::OdeOptions {
        branchlab::numerics::ode::OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            initial_step: None,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub times: Vec<f64>,
    pub h4_starts: usize,
    pub h4_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        let d = branchlab::spectral::AssumptionOptions::default();
        Self {
            times: d.times,
            h4_starts: d.h4_starts,
            h4_tol: d.h4_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    /// Survival probabilities (`u` with `g0 = 0`, or the θ-ladder).
    Survival,
    /// `u_t` from `u_0 = 1 - g0`.
    U,
    /// Log-Laplace functional `v_t[f]` (resp. `V_t[f]`).
    V,
    /// Mean semigroup applied to `f`.
    Linear,
    /// Log-Laplace functional with immigration.
    Immigration,
    /// Stationary Laplace functional of a subcritical immigration model.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub equation: Equation,
    pub horizon: f64,
    /// Defaults to `0, 1, 2, 4, ..., horizon`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g0: Option<Vec<f64>>,
    /// Ladder judged from this time on; defaults to the first positive
    /// checkpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    pub tail_tol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            equation: Equation::Survival,
            horizon: 1024.0,
            checkpoints: None,
            g0: None,
            t_min: None,
            tail_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Survival,
    Laplace,
    FirstMoment,
}

fn yes() -> bool {
    true
}

fn default_thetas() -> Vec<f64> {
    vec![1.0]
}

fn default_cap() -> u64 {
    DEFAULT_POPULATION_CAP
}

fn default_max_replicates() -> u64 {
    100_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub estimator: Estimator,
    /// Estimation times; survival curves use all of them, the other
    /// estimators one run per time.
    pub times: Vec<f64>,
    pub n: u64,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub conditional: bool,
    #[serde(default = "yes")]
    pub divide_by_t: bool,
    /// Conditional Laplace only: keep adding replicates until this many
    /// survivors are seen (then `n` is ignored).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_survivors: Option<u64>,
    #[serde(default = "default_max_replicates")]
    pub max_replicates: u64,
    /// Rows of raw replicate counts to write; 0 disables the file.
    #[serde(default)]
    pub replicate_rows: usize,
    #[serde(default = "default_cap")]
    pub population_cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub t: f64,
    pub replicates: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_max_replicates")]
    pub max_replicates: u64,
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    #[serde(default)]
    pub allowance: f64,
}

fn default_sigmas() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem: Option<u8>,
    pub schedule: Vec<f64>,
    pub theta_grid: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    pub tail_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            theorem: None,
            schedule: default_schedule(),
            theta_grid: default_theta_grid(),
            tolerance: None,
            mc: None,
            tail_tol: 1e-10,
        }
    }
}
