//! The unbounded arrival-count family `P(N = k) ∝ 1 / (k ln(k+2)^(p+1))`,
//! `k >= 1`.
//!
//! Expectations are a direct sum below `K` plus an Euler–Maclaurin tail
//! whose integral is taken in `s = ln x` and closed analytically once the
//! test function has reached its asymptotic form.

use rand::Rng;

use crate::numerics::quad::{integrate, QuadTolerance};

const HEAD: usize = 4096;
/// Margin in `s` past which the test function is at its asymptote to
/// within `e^-40`.
const MARGIN: f64 = 40.0;

/// A series value with a bound on its truncation/quadrature error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    pub error: f64,
}

/// Bounded or logarithmic test functions `g(k)` whose mean is needed.
#[derive(Debug, Clone, Copy)]
pub enum TailFn {
    /// `1 - e^{-c k}` with `c = e^{ln_c}`; `ln_c = +inf` means `g = 1`.
    Laplace { ln_c: f64 },
    /// `ln(1 + c k)`.
    LogOnePlus { c: f64 },
    One,
}

impl TailFn {
    fn at(&self, k: f64) -> f64 {
        match *self {
            TailFn::Laplace { ln_c } => -(-(ln_c + k.ln()).exp()).exp_m1(),
            TailFn::LogOnePlus { c } => (c * k).ln_1p(),
            TailFn::One => 1.0,
        }
    }

    /// The same function at `k = e^s`, without forming `e^s`.
    fn at_log(&self, s: f64) -> f64 {
        match *self {
            TailFn::Laplace { ln_c } => -(-(ln_c + s).exp()).exp_m1(),
            TailFn::LogOnePlus { c } => {
                let z = c.ln() + s;
                if z > 30.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
            TailFn::One => 1.0,
        }
    }

    /// `s` at which the function turns from its small-`k` to its large-`k` form.
    fn transition(&self) -> f64 {
        match *self {
            TailFn::Laplace { ln_c } => -ln_c,
            TailFn::LogOnePlus { c } => -c.ln(),
            TailFn::One => f64::NEG_INFINITY,
        }
    }
}

/// Precomputed head weights and normalizer for one exponent `p > 0`.
#[derive(Debug, Clone)]
pub struct TailTable {
    p: f64,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    norm: SeriesValue,
}

impl TailTable {
    pub fn new(p: f64) -> Self {
        assert!(p > 0.0, "log-tail exponent must be positive");
        let q = p + 1.0;
        let weights: Vec<f64> = (1..HEAD).map(|k| weight(k as f64, q)).collect();
        let mut table = Self {
            p,
            weights,
            cumulative: Vec::new(),
            norm: SeriesValue { value: 1.0, error: 0.0 },
        };
        table.norm = table.raw_sum(TailFn::One);
        let mut acc = 0.0;
        table.cumulative = table
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc / table.norm.value
            })
            .collect();
        table
    }

    /// `E[g(N)]` with a bound on the error.
    pub fn expectation(&self, g: TailFn) -> SeriesValue {
        if let TailFn::Laplace { ln_c } = g {
            if ln_c == f64::INFINITY {
                return SeriesValue { value: 1.0, error: 0.0 };
            }
            if ln_c == f64::NEG_INFINITY {
                return SeriesValue { value: 0.0, error: 0.0 };
            }
        }
        if let TailFn::LogOnePlus { c } = g {
            if c == 0.0 {
                return SeriesValue { value: 0.0, error: 0.0 };
            }
            if self.p <= 1.0 {
                return SeriesValue {
                    value: f64::INFINITY,
                    error: 0.0,
                };
            }
        }
        let raw = self.raw_sum(g);
        let z = self.norm.value;
        let value = raw.value / z;
        SeriesValue {
            value,
            error: raw.error / z + value * self.norm.error / z,
        }
    }

    fn raw_sum(&self, g: TailFn) -> SeriesValue {
        let q = self.p + 1.0;
        let mut head = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            head += w * g.at((i + 1) as f64);
        }
        let k = HEAD as f64;
        let f = |x: f64| g.at(x) * weight(x, q);
        let h = 1e-3 * k;
        let df = (f(k + h) - f(k - h)) / (2.0 * h);
        let (integral, quad_err) = self.tail_integral(g);
        SeriesValue {
            value: head + integral + 0.5 * f(k) - df / 12.0,
            error: quad_err + df.abs() / k,
        }
    }

    /// `∫_K^∞ g(x) / (x ln(x+2)^q) dx` in the variable `s = ln x`.
    fn tail_integral(&self, g: TailFn) -> (f64, f64) {
        let p = self.p;
        let q = p + 1.0;
        let s0 = (HEAD as f64).ln();
        let st = g.transition();
        let s_end = (st + MARGIN).max(MARGIN).max(s0);
        let integrand = |s: f64| g.at_log(s) * (s + (2.0 * (-s).exp()).ln_1p()).powf(-q);
        let mut cuts = vec![s0];
        for c in [st - MARGIN, st] {
            if c > s0 && c < s_end {
                cuts.push(c);
            }
        }
        cuts.push(s_end);
        let tol = QuadTolerance {
            abs: 1e-14,
            rel: 1e-13,
            max_intervals: 20_000,
        };
        let mut value = 0.0;
        let mut error = 0.0;
        for w in cuts.windows(2) {
            match integrate(integrand, w[0], w[1], tol) {
                Ok(r) => {
                    value += r.value;
                    error += r.error;
                }
                Err(crate::error::Error::QuadratureNotConverged { achieved, .. }) => {
                    error += achieved;
                }
                Err(_) => unreachable!(),
            }
        }
        let analytic = match g {
            TailFn::Laplace { .. } | TailFn::One => s_end.powf(-p) / p,
            TailFn::LogOnePlus { c } => s_end.powf(1.0 - p) / (p - 1.0) + c.ln() * s_end.powf(-p) / p,
        };
        (value + analytic, error)
    }

    /// Draws `N`; values beyond `1e15` saturate to `u64::MAX`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let head_mass = *self.cumulative.last().expect("non-empty head");
        let u: f64 = rng.random();
        if u < head_mass {
            let idx = self.cumulative.partition_point(|c| *c <= u);
            return (idx.min(self.weights.len() - 1) + 1) as u64;
        }
        let k0 = HEAD as f64;
        let lk0 = k0.ln();
        let q = self.p + 1.0;
        loop {
            let v: f64 = 1.0 - rng.random::<f64>();
            let x = (lk0 * v.powf(-1.0 / self.p)).exp();
            if !(x < 1e15) {
                return u64::MAX;
            }
            let k = x.floor();
            // proposal mass of k is proportional to ∫_k^{k+1} dx / (x ln^q x)
            let (l0, l1) = (k.ln(), (k + 1.0).ln());
            let cell = l0.powf(-self.p) * (-(self.p * (l1 / l0).ln()).exp_m1()) / self.p;
            let accept = weight(k, q) / ((1.0 + 1.0 / k0) * cell);
            if rng.random::<f64>() < accept {
                return k as u64;
            }
        }
    }
}

fn weight(k: f64, q: f64) -> f64 {
    1.0 / (k * (k + 2.0).ln().powf(q))
}
