use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::format_number;
use crate::numerics::ode::StepStats;

/// Checkpointed solution of one evolution equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Name of the primary vector channel (`u`, `V`, `v`, ...).
    pub channel: String,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Further per-type channels, e.g. the full log-Laplace `w`.
    pub vectors: BTreeMap<String, Vec<Vec<f64>>>,
    /// Per-checkpoint scalars such as `a` or the immigration integral `I`.
    pub scalars: BTreeMap<String, Vec<f64>>,
    pub step_stats: StepStats,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.values.last().expect("trajectory has at least one checkpoint")
    }

    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.scalars.get(name).map(|v| v.as_slice())
    }

    /// Adds the scalar channel `<values, weights>` under `name`.
    pub fn add_pairing(&mut self, name: &str, weights: &[f64]) {
        let s = self.values.iter().map(|v| v.iter().zip(weights).map(|(a, b)| a * b).sum()).collect();
        self.scalars.insert(name.to_string(), s);
    }

    /// Long-format CSV with columns `t,channel,type_index,value`; scalar
    /// channels leave `type_index` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,channel,type_index,value\n");
        for (k, &t) in self.times.iter().enumerate() {
            let t = format_number(t);
            for (x, v) in self.values[k].iter().enumerate() {
                let _ = writeln!(out, "{t},{},{x},{}", self.channel, format_number(*v));
            }
            for (name, series) in &self.vectors {
                for (x, v) in series[k].iter().enumerate() {
                    let _ = writeln!(out, "{t},{name},{x},{}", format_number(*v));
                }
            }
            for (name, series) in &self.scalars {
                let _ = writeln!(out, "{t},{name},,{}", format_number(series[k]));
            }
        }
        out
    }
}

/// `{0, 1, 2, 4, ..., horizon}`; the horizon is appended when it is not a
/// power of two.
pub fn log2_checkpoints(horizon: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    if !(horizon > 0.0) {
        return out;
    }
    let mut t = 1.0;
    while t < horizon {
        out.push(t);
        t *= 2.0;
    }
    out.push(horizon);
    out
}
