//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// `max_i |a_i - n_i| / (|a_i| + |n_i| + 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Central-difference estimate of the gradient of a scalar function.
pub fn central_difference<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let base = f(x)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("finite-difference objective".into()));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite-difference objective near coordinate {i}"
            )));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Compares a supplied analytic gradient with central differences of `f`.
pub fn check_gradient<F>(f: F, analytic: &Tensor, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if analytic.len() != x.len() {
        return Err(Error::Dimension {
            op: "check_gradient",
            lhs: analytic.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let numeric = central_difference(f, x, h)?;
    Ok(max_relative_error(analytic.data(), numeric.data()))
}

/// Checks the tape's reverse-mode gradient of the scalar graph built by `f`
/// against central differences of its forward value.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var>,
{
    let eval = |input: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = f(&mut tape, v)?;
        scalar_value(tape.value(out))
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    let value = scalar_value(tape.value(out))?;
    if !value.is_finite() {
        return Err(Error::NonFinite("finite-difference objective".into()));
    }
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    check_gradient(eval, &analytic, x, h)
}

fn scalar_value(t: &Tensor) -> Result<f64> {
    if t.len() != 1 {
        return Err(Error::Contract(format!(
            "objective must be scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}
