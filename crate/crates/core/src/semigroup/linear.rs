//! The mean semigroup `T_t = e^{tL}` and its second-moment companion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::quad::{integrate_vec, QuadTolerance};
use crate::spectral::MeanGenerator;

/// Relative tolerance of the Duhamel quadrature in the second moment.
pub const SECOND_MOMENT_RTOL: f64 = 1e-8;

/// `T_t[f] = e^{tL} f`.
pub fn linear_action(gen: &MeanGenerator, f: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    if f.len() != gen.n() {
        return Err(Error::InvalidInput(format!("f has length {}, expected {}", f.len(), gen.n())));
    }
    if t == 0.0 {
        return Ok(f.to_vec());
    }
    let v = gen.exp(t) * DVector::from_column_slice(f);
    Ok(v.iter().copied().collect())
}

/// `T_t^{(2)}[f] = T_t[f^2] + ∫_0^t T_s[V[T_{t-s} f]] ds`.
pub fn second_moment(model: &Model, gen: &MeanGenerator, f: &[f64], t: f64) -> Result<Vec<f64>> {
    model.ensure_valid()?;
    check_time(t)?;
    crate::model::check_nonnegative_vector("f", f, model.n())?;
    let n = model.n();
    let fv = DVector::from_column_slice(f);
    let sq = fv.map(|x| x * x);
    let first = if t == 0.0 { sq } else { gen.exp(t) * sq };
    if t == 0.0 {
        return Ok(first.iter().copied().collect());
    }
    let mut vbuf = vec![0.0; n];
    let quad = integrate_vec(
        |s, out| {
            let inner = gen.exp(t - s) * &fv;
            model.v_unchecked(inner.as_slice(), f64::INFINITY, &mut vbuf);
            let outer = gen.exp(s) * DVector::from_column_slice(&vbuf);
            out.copy_from_slice(outer.as_slice());
        },
        n,
        0.0,
        t,
        QuadTolerance::new(1e-300, SECOND_MOMENT_RTOL),
    )?;
    Ok(first.iter().zip(&quad.value).map(|(a, b)| a + b).collect())
}

/// Symmetric matrices `M_x(t)` with `T_t^{(2)}[f](x) = f^T M_x(t) f`.
pub fn second_moment_forms(model: &Model, gen: &MeanGenerator, t: f64) -> Result<Vec<DMatrix<f64>>> {
    check_time(t)?;
    let n = model.n();
    let e_t = gen.exp(t);
    let mut forms: Vec<DMatrix<f64>> = (0..n).map(|x| DMatrix::from_diagonal(&e_t.row(x).transpose())).collect();
    if t == 0.0 {
        return Ok(forms);
    }
    let w = model.v_forms();
    let quad = integrate_vec(
        |s, out| {
            let e_s = gen.exp(s);
            let e_r = gen.exp(t - s);
            let pulled: Vec<DMatrix<f64>> = w.iter().map(|wm| e_r.transpose() * wm * &e_r).collect();
            out.fill(0.0);
            for x in 0..n {
                for (y, p) in pulled.iter().enumerate() {
                    let c = e_s[(x, y)];
                    if c == 0.0 {
                        continue;
                    }
                    let block = &mut out[x * n * n..(x + 1) * n * n];
                    for (o, v) in block.iter_mut().zip(p.iter()) {
                        *o += c * v;
                    }
                }
            }
        },
        n * n * n,
        0.0,
        t,
        QuadTolerance::new(1e-300, SECOND_MOMENT_RTOL),
    )?;
    for (x, form) in forms.iter_mut().enumerate() {
        let block = DMatrix::from_column_slice(n, n, &quad.value[x * n * n..(x + 1) * n * n]);
        *form += &block;
        let sym = 0.5 * (&*form + form.transpose());
        *form = sym;
    }
    Ok(forms)
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time {t} must be finite and nonnegative")));
    }
    Ok(())
}
