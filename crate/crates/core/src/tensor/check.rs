use super::{gradient, Tape, Tensor};
use crate::error::{Error, Result};

/// `max_i |a_i - b_i| / (|a_i| + 1e-12)`, with `analytic` as the reference.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-12))
        .fold(0.0, f64::max)
}

/// Compares the reverse-mode gradient of `f` at `at` against central
/// differences with step `eps`; returns the worst relative error over
/// coordinates.
pub fn finite_diff_check<F>(f: F, at: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", "must be positive"));
    }
    let tape = Tape::new();
    let x = tape.var(&at.detach())?;
    let y = f(&x)?;
    let analytic = if y.is_on_tape() {
        gradient(&y, &[&x], false)?.remove(0).to_vec()
    } else {
        vec![0.0; at.numel()]
    };

    let eval = |data: Vec<f64>| -> Result<f64> {
        let v = f(&Tensor::new(at.shape().to_vec(), data)?)?;
        if v.numel() != 1 {
            return Err(Error::Gradient("finite_diff_check needs a scalar function".into()));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::NonFinite { kind: "finite_diff_check" });
        }
        Ok(v)
    };
    let mut numeric = Vec::with_capacity(at.numel());
    for i in 0..at.numel() {
        let mut plus = at.to_vec();
        let mut minus = at.to_vec();
        plus[i] += eps;
        minus[i] -= eps;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }
    Ok(max_relative_error(&analytic, &numeric))
}
