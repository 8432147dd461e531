mod common;

use branchlab::limits::{kolmogorov_constant, yaglom_laplace};
use branchlab::model::Model;
use branchlab::numerics::ode::OdeOptions;
use branchlab::semigroup::{linear_action, solve_u, solve_v, survival_probability};
use branchlab::simulator::mc_survival;
use branchlab::spectral::{analyze, delta_first, Criticality};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_vector(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(0.0..=1.0)).collect()
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn remainder_is_positive_and_dominated(seed in any::<u64>()) {
        let mut r = rng(seed);
        let bm = common::random_branching(&mut r, 3, seed % 2 == 0);
        let g = unit_vector(&mut r, bm.n());
        let a = bm.apply_a(&g).unwrap();
        let v = bm.apply_v(&g, f64::INFINITY).unwrap();
        for (a, v) in a.iter().zip(&v) {
            prop_assert!(*a >= -1e-15 && *a <= 0.5 * v + 1e-14 * (1.0 + v));
        }
        let sm = common::random_super(&mut r, 3);
        let h: Vec<f64> = (0..sm.n()).map(|_| r.random_range(0.0..20.0)).collect();
        let j = sm.apply_j(&h).unwrap();
        let v = sm.apply_v(&h, f64::INFINITY).unwrap();
        for (j, v) in j.iter().zip(&v) {
            prop_assert!(*j >= -1e-12 && *j <= 0.5 * v + 1e-12 * (1.0 + v));
        }
    }

    #[test]
    fn variance_functional_is_quadratic_and_matches_its_forms(seed in any::<u64>(), c in 0.0f64..3.0) {
        let mut r = rng(seed);
        let m = Model::Branching(common::random_branching(&mut r, 3, false));
        let g = unit_vector(&mut r, m.n());
        let v = m.apply_v(&g, f64::INFINITY).unwrap();
        let cg: Vec<f64> = g.iter().map(|x| c * x).collect();
        let vc = m.apply_v(&cg, f64::INFINITY).unwrap();
        for (a, b) in v.iter().zip(&vc) {
            prop_assert!((c * c * a - b).abs() <= 1e-12 * (1.0 + b));
        }
        for (x, form) in m.v_forms().iter().enumerate() {
            let mut q = 0.0;
            for i in 0..m.n() {
                for j in 0..m.n() {
                    q += g[i] * form[(i, j)] * g[j];
                }
            }
            prop_assert!((q - v[x]).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn immigration_mechanisms_are_monotone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..=3);
        let law = common::random_immigration(&mut r, n);
        let chi = common::random_sp_immigration(&mut r, n);
        let f = unit_vector(&mut r, n);
        let g: Vec<f64> = f.iter().map(|x| x + r.random_range(0.0..1.0)).collect();
        prop_assert!(law.apply_h(&f).unwrap().value <= law.apply_h(&g).unwrap().value + 1e-14);
        prop_assert!(law.apply_h(&vec![0.0; n]).unwrap().value.abs() <= 1e-15);
        prop_assert!(chi.apply_chi(&f).unwrap() <= chi.apply_chi(&g).unwrap() + 1e-12);
    }

    #[test]
    fn flow_composes(seed in any::<u64>(), t in 0.1f64..5.0, s in 0.1f64..5.0) {
        let mut r = rng(seed);
        let m = Model::Branching(common::random_branching(&mut r, 3, false));
        let gen = analyze(&m).unwrap().generator;
        let g = unit_vector(&mut r, m.n());
        let opts = OdeOptions::default();
        let whole = solve_u(&m, &gen, &g, &[0.0, t, t + s], &opts).unwrap();
        let ut = whole.values[1].clone();
        let g_mid: Vec<f64> = ut.iter().map(|u| (1.0 - u).clamp(0.0, 1.0)).collect();
        let split = solve_u(&m, &gen, &g_mid, &[0.0, s], &opts).unwrap();
        for (a, b) in whole.last().iter().zip(split.last()) {
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn survival_is_a_decreasing_probability(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = Model::Branching(common::random_branching(&mut r, 3, false));
        let gen = analyze(&m).unwrap().generator;
        let mu: Vec<f64> = (0..m.n()).map(|_| r.random_range(0..=2) as f64).collect();
        let opts = OdeOptions::default();
        let mut prev = 1.0;
        for t in [0.5, 1.0, 2.0, 4.0] {
            let p = survival_probability(&m, &gen, &mu, t, &opts).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p <= prev + 1e-12);
            prev = p;
        }
    }

    #[test]
    fn superprocess_log_laplace_is_bounded_by_mean(seed in any::<u64>(), t in 0.1f64..8.0) {
        let mut r = rng(seed);
        let m = Model::Super(common::random_super(&mut r, 3));
        let gen = analyze(&m).unwrap().generator;
        let f: Vec<f64> = (0..m.n()).map(|_| r.random_range(0.0..3.0)).collect();
        let v = solve_v(&m, &gen, &f, &[0.0, t], &OdeOptions::default()).unwrap();
        let bound = linear_action(&gen, &f, t).unwrap();
        for (a, b) in v.last().iter().zip(&bound) {
            prop_assert!(*a >= -1e-12 && *a <= b + 1e-9 * (1.0 + b));
        }
    }

    #[test]
    fn delta_is_nonnegative(seed in any::<u64>(), t in 0.0f64..20.0) {
        let mut r = rng(seed);
        let m = if seed % 2 == 0 {
            Model::Branching(common::random_branching(&mut r, 3, false))
        } else {
            Model::Super(common::random_super(&mut r, 3))
        };
        let s = analyze(&m).unwrap();
        prop_assert!(delta_first(&s.generator, &s.triple, t) >= 0.0);
    }

    #[test]
    fn limit_constants_scale(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut r = rng(seed);
        let m = Model::Branching(common::random_critical_branching(&mut r, 3));
        let s = analyze(&m).unwrap();
        prop_assert_eq!(s.criticality, Criticality::Critical);
        let mu = unit_vector(&mut r, m.n());
        prop_assume!(mu.iter().any(|x| *x > 0.0));
        let k = kolmogorov_constant(&s, &m, &mu).unwrap();
        let scaled: Vec<f64> = mu.iter().map(|x| c * x).collect();
        let kc = kolmogorov_constant(&s, &m, &scaled).unwrap();
        prop_assert!((kc - c * k).abs() <= 1e-12 * (1.0 + kc.abs()));
        let f = vec![1.0; m.n()];
        let mut prev = 1.0;
        for theta in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let y = yaglom_laplace(&s, &m, &f, theta).unwrap();
            let doubled: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
            let y2 = yaglom_laplace(&s, &m, &doubled, theta / 2.0).unwrap();
            prop_assert!(y > 0.0 && y < prev);
            prop_assert!((y - y2).abs() <= 1e-12);
            prev = y;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>()) {
        let bm = branchlab::corpus::three_type_nonlocal();
        let a = mc_survival(&bm, &[1, 0, 0], 2.0, 500, seed).unwrap();
        let b = mc_survival(&bm, &[1, 0, 0], 2.0, 500, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn random_models_are_admissible() {
    let mut r = rng(0);
    for _ in 0..200 {
        let b = Model::Branching(common::random_branching(&mut r, 3, true));
        assert!(b.validate().is_admissible());
        let s = Model::Super(common::random_super(&mut r, 3));
        assert!(s.validate().is_admissible());
        assert!(analyze(&b).unwrap().triple.residual <= branchlab::spectral::EIGEN_TOL);
    }
}
