//! Globally adaptive Gauss–Kronrod (7/15) quadrature for scalar and
//! vector-valued integrands on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5, 7.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadTolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl QuadTolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let offsets: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sgn in offsets {
            f(center + sgn * half * x, buf);
            for d in 0..dim {
                kronrod[d] += wk * buf[d];
                if i % 2 == 1 {
                    gauss[d] += WG[i / 2] * buf[d];
                }
            }
        }
    }
    let mut err = 0.0_f64;
    for d in 0..dim {
        kronrod[d] *= half;
        gauss[d] *= half;
        err = err.max((kronrod[d] - gauss[d]).abs());
    }
    (kronrod, err)
}

/// Integrates a vector-valued function of dimension `dim` over `[a, b]`.
///
/// Errors are measured in the max norm; the loop stops once the summed
/// error estimate is below `max(abs, rel * |I|_inf)`.
pub fn integrate_vec<F>(mut f: F, dim: usize, a: f64, b: f64, tol: QuadTolerance) -> Result<QuadResult<Vec<f64>>>
where
    F: FnMut(f64, &mut [f64]),
{
    if a == b {
        return Ok(QuadResult {
            value: vec![0.0; dim],
            error: 0.0,
            evaluations: 0,
        });
    }
    let mut buf = vec![0.0; dim];
    let (value, error) = gk15(&mut f, a, b, dim, &mut buf);
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });

    loop {
        let total_err: f64 = heap.iter().map(|s| s.error).sum();
        let mut total = vec![0.0; dim];
        for s in heap.iter() {
            for d in 0..dim {
                total[d] += s.value[d];
            }
        }
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let target = tol.abs.max(tol.rel * scale);
        if total_err <= target {
            return Ok(QuadResult {
                value: total,
                error: total_err,
                evaluations,
            });
        }
        if heap.len() >= tol.max_intervals {
            return Err(Error::QuadratureNotConverged {
                achieved: total_err,
                requested: target,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval cannot be split further in floating point
            return Err(Error::QuadratureNotConverged {
                achieved: total_err,
                requested: target,
            });
        }
        let (lv, le) = gk15(&mut f, worst.a, mid, dim, &mut buf);
        let (rv, re) = gk15(&mut f, mid, worst.b, dim, &mut buf);
        evaluations += 30;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: lv,
            error: le,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: rv,
            error: re,
        });
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(mut f: F, a: f64, b: f64, tol: QuadTolerance) -> Result<QuadResult<f64>>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_vec(|x, out| out[0] = f(x), 1, a, b, tol)?;
    Ok(QuadResult {
        value: r.value[0],
        error: r.error,
        evaluations: r.evaluations,
    })
}
