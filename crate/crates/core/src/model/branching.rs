use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_motion, check_nonnegative_vector, check_rates, Diagnostics, TypeSpace, PROB_TOL};
use crate::error::{Error, Result};

/// One outcome of a branching event: with probability `prob` the parent is
/// replaced by `children` (a multiset of type indices, possibly empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffspringAtom {
    pub prob: f64,
    pub children: Vec<usize>,
}

impl OffspringAtom {
    pub fn new(prob: f64, children: impl Into<Vec<usize>>) -> Self {
        Self {
            prob,
            children: children.into(),
        }
    }
}

/// Non-local branching Markov process on `n` types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingModel {
    pub space: TypeSpace,
    /// Rate matrix; row deficits are killing rates.
    pub motion: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub offspring: Vec<Vec<OffspringAtom>>,
}

impl BranchingModel {
    /// Model without motion where every type branches at rate `beta`
    /// according to the same offspring atoms.
    pub fn without_motion(n: usize, beta: Vec<f64>, offspring: Vec<Vec<OffspringAtom>>) -> Self {
        Self {
            space: TypeSpace::new(n),
            motion: vec![vec![0.0; n]; n],
            beta,
            offspring,
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
        if let Some(labels) = &self.space.labels {
            if labels.len() != n {
                diag.violation(format!("{} labels for {n} types", labels.len()), None, None);
            }
        }
        check_motion(&self.motion, n, &mut diag);
        check_rates("beta", &self.beta, n, true, &mut diag);
        if self.offspring.len() != n {
            diag.violation(format!("offspring laws given for {} types, expected {n}", self.offspring.len()), None, None);
            return diag;
        }
        let mut second = 0.0_f64;
        for (x, atoms) in self.offspring.iter().enumerate() {
            let mut total = 0.0;
            let mut moment = 0.0;
            for (i, atom) in atoms.iter().enumerate() {
                if !(atom.prob >= 0.0) || !atom.prob.is_finite() {
                    diag.violation(format!("offspring atom {i} of type {x} has probability {}", atom.prob), Some(x), Some(i));
                }
                if let Some(&c) = atom.children.iter().find(|&&c| c >= n) {
                    diag.violation(format!("offspring atom {i} of type {x} names child type {c} >= {n}"), Some(x), Some(i));
                }
                if atom.children.len() == 1 && atom.prob > 0.0 {
                    diag.warnings.push(format!(
                        "offspring atom {i} of type {x} has exactly one child; equivalent to an extra motion jump"
                    ));
                }
                total += atom.prob;
                moment += atom.prob * (atom.children.len() as f64).powi(2);
            }
            if (total - 1.0).abs() > PROB_TOL {
                diag.violation(format!("offspring probabilities of type {x} sum to {total}"), Some(x), None);
            }
            second = second.max(moment);
        }
        diag.second_moment_sup = second;
        diag
    }

    /// `M[x][y]`: expected number of type-`y` children per branching at `x`.
    pub fn mean_matrix(&self) -> Result<DMatrix<f64>> {
        self.validate().into_result()?;
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (x, atoms) in self.offspring.iter().enumerate() {
            for atom in atoms {
                for &c in &atom.children {
                    m[(x, c)] += atom.prob;
                }
            }
        }
        Ok(m)
    }

    /// `A[g](x) = beta(x) E_x[prod (1 - g(x_i)) - 1 + sum g(x_i)]` for
    /// `g` in `[0, 1]^n`.
    pub fn apply_a(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.validate().into_result()?;
        check_unit_box(g, self.n())?;
        let mut out = vec![0.0; self.n()];
        self.a_into(g, &mut out);
        Ok(out)
    }

    // Per atom, R_j = prod_{i<=j}(1-g_i) - 1 + sum_{i<=j} g_i and
    // Q_j = 1 - prod_{i<=j}(1-g_i) obey R_j = R_{j-1} + g_j Q_{j-1} and
    // Q_j = Q_{j-1} + g_j (1 - Q_{j-1}); every increment is nonnegative.
    pub(crate) fn a_into(&self, g: &[f64], out: &mut [f64]) {
        for (x, atoms) in self.offspring.iter().enumerate() {
            let mut acc = 0.0;
            for atom in atoms {
                let (mut r, mut q) = (0.0, 0.0);
                for &c in &atom.children {
                    let gc = g[c];
                    r += gc * q;
                    q += gc * (1.0 - q);
                }
                acc += atom.prob * r;
            }
            out[x] = self.beta[x] * acc;
        }
    }

    /// `V_M[f](x) = beta(x) E_x[sum_{i != j} f(x_i) f(x_j) 1{N <= M}]`.
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
        for (x, atoms) in self.offspring.iter().enumerate() {
            let mut acc = 0.0;
            for atom in atoms {
                if atom.children.len() as f64 > truncation {
                    continue;
                }
                let (mut pairs, mut sum) = (0.0, 0.0);
                for &c in &atom.children {
                    pairs += f[c] * sum;
                    sum += f[c];
                }
                acc += atom.prob * 2.0 * pairs;
            }
            out[x] = self.beta[x] * acc;
        }
    }

    pub(crate) fn v_forms(&self) -> Vec<DMatrix<f64>> {
        let n = self.n();
        let mut forms = Vec::with_capacity(n);
        for (x, atoms) in self.offspring.iter().enumerate() {
            let mut w = DMatrix::zeros(n, n);
            for atom in atoms {
                let mut counts = vec![0.0; n];
                for &c in &atom.children {
                    counts[c] += 1.0;
                }
                for a in 0..n {
                    for b in 0..n {
                        let pairs = counts[a] * counts[b] - if a == b { counts[a] } else { 0.0 };
                        w[(a, b)] += self.beta[x] * atom.prob * pairs;
                    }
                }
            }
            forms.push(w);
        }
        forms
    }

    pub fn largest_family(&self) -> usize {
        self.offspring
            .iter()
            .flat_map(|atoms| atoms.iter().filter(|a| a.prob > 0.0).map(|a| a.children.len()))
            .max()
            .unwrap_or(0)
    }
}

fn check_unit_box(g: &[f64], n: usize) -> Result<()> {
    if g.len() != n {
        return Err(Error::InvalidInput(format!("g has length {}, expected {n}", g.len())));
    }
    if let Some((x, v)) = g.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidInput(format!("g[{x}] = {v} lies outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn binary_model_is_admissible() {
        let d = corpus::critical_binary().validate();
        assert!(d.is_admissible(), "{:?}", d.violations);
        assert!(d.warnings.is_empty());
        assert_eq!(d.second_moment_sup, 2.0);
    }

    #[test]
    fn probabilities_not_summing_to_one() {
        let mut m = corpus::critical_binary();
        m.offspring[0][1].prob = 0.4;
        let d = m.validate();
        assert_eq!(d.violations.len(), 1);
        assert_eq!(d.violations[0].message, "offspring probabilities of type 0 sum to 0.9");
        assert_eq!(d.violations[0].type_index, Some(0));
    }

    #[test]
    fn single_child_atom_warns_but_is_admissible() {
        let m = BranchingModel::without_motion(
            1,
            vec![1.0],
            vec![vec![OffspringAtom::new(0.5, vec![]), OffspringAtom::new(0.25, vec![0]), OffspringAtom::new(0.25, vec![0, 0, 0])]],
        );
        let d = m.validate();
        assert!(d.is_admissible());
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn child_index_out_of_range() {
        let m = BranchingModel::without_motion(1, vec![1.0], vec![vec![OffspringAtom::new(1.0, vec![0, 1])]]);
        assert!(!m.validate().is_admissible());
    }

    #[test]
    fn positive_motion_row_sum_rejected() {
        let mut m = corpus::swap_model();
        m.motion = vec![vec![-1.0, 2.0], vec![0.0, 0.0]];
        assert!(!m.validate().is_admissible());
    }

    #[test]
    fn mean_matrix_examples() {
        let m = corpus::critical_binary().mean_matrix().unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        let m = corpus::swap_model().mean_matrix().unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let empty = BranchingModel::without_motion(2, vec![1.0, 2.0], vec![vec![OffspringAtom::new(1.0, vec![])]; 2]);
        assert_eq!(empty.mean_matrix().unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn apply_a_examples() {
        let bin = corpus::critical_binary();
        assert_eq!(bin.apply_a(&[0.0]).unwrap(), vec![0.0]);
        assert!((bin.apply_a(&[0.2]).unwrap()[0] - 0.02).abs() < 1e-16);
        let swap = corpus::swap_model();
        let a = swap.apply_a(&[0.1, 0.3]).unwrap();
        // direct atom sum oracle
        let oracle0 = 0.5 * ((1.0 - 0.3_f64).powi(2) - 1.0 + 0.6) + 0.5 * 0.0;
        assert!((a[0] - oracle0).abs() < 1e-15);
        assert!((a[0] - 0.045).abs() < 1e-15);
        assert!(bin.apply_a(&[1.5]).is_err());
    }

    #[test]
    fn apply_a_matches_product_formula_for_large_families() {
        let m = corpus::three_type_nonlocal();
        let g = [0.3, 0.7, 0.9];
        let a = m.apply_a(&g).unwrap();
        for (x, atoms) in m.offspring.iter().enumerate() {
            let direct: f64 = atoms
                .iter()
                .map(|at| {
                    let prod: f64 = at.children.iter().map(|&c| 1.0 - g[c]).product();
                    let sum: f64 = at.children.iter().map(|&c| g[c]).sum();
                    at.prob * (prod - 1.0 + sum)
                })
                .sum::<f64>()
                * m.beta[x];
            assert!((a[x] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn apply_v_examples() {
        let bin = corpus::critical_binary();
        assert_eq!(bin.apply_v(&[1.0], f64::INFINITY).unwrap(), vec![1.0]);
        assert_eq!(bin.apply_v(&[0.0], f64::INFINITY).unwrap(), vec![0.0]);
        assert_eq!(bin.apply_v(&[1.0], 1.0).unwrap(), vec![0.0]);
        assert!(bin.apply_v(&[-1.0], 1.0).is_err());
    }

    #[test]
    fn v_forms_agree_with_apply_v() {
        let m = corpus::three_type_nonlocal();
        let f = [0.4, 1.3, 0.2];
        let v = m.apply_v(&f, f64::INFINITY).unwrap();
        let fv = nalgebra::DVector::from_column_slice(&f);
        for (x, w) in m.v_forms().iter().enumerate() {
            let q = (fv.transpose() * w * &fv)[(0, 0)];
            assert!((q - v[x]).abs() < 1e-13);
        }
    }
}
