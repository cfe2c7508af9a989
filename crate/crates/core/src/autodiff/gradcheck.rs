use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares the tape gradient of scalar `f` at `x` with central differences.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn gradient_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let mut params = BTreeMap::new();
    params.insert("x".to_string(), x.clone());
    gradient_check_params(|tape, p| f(tape, tape.param("x", p["x"].clone())), &params, eps)
}

/// Finite-difference check over every coordinate of every named parameter.
///
/// `f` receives a fresh tape and the parameter values and must bind them with
/// [`Tape::param`] under the same names.
pub fn gradient_check_params<F>(f: F, params: &BTreeMap<String, Tensor<f64>>, eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &BTreeMap<String, Tensor<f64>>) -> Result<Var>,
{
    let eval = |p: &BTreeMap<String, Tensor<f64>>| -> Result<f64> {
        let tape = Tape::new().with_finite_checks(true);
        let out = f(&tape, p)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("function value {v}")));
        }
        Ok(v)
    };

    let tape = Tape::new().with_finite_checks(true);
    let loss = f(&tape, params)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite("function value at x".into()));
    }
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (name, value) in params {
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(name).map_or(0.0, |g| g.data()[i]);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
