use super::Param;
use crate::error::{Error, Result};

/// Compares the analytic gradient produced by `loss` against central
/// differences, returning the largest per-coordinate relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// `loss` evaluates the objective at `p.value` and accumulates its analytic
/// gradient into `p.grad`. Gradients are cleared before every evaluation.
pub fn finite_diff_check<F>(mut loss: F, p: &mut Param, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Param) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Argument(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut eval = |p: &mut Param| -> Result<f64> {
        p.zero_grad();
        let v = loss(p)?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };
    eval(p)?;
    let analytic = p.grad.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.value.len() {
        let orig = p.value.data()[i];
        p.value.data_mut()[i] = orig + eps;
        let up = eval(p)?;
        p.value.data_mut()[i] = orig - eps;
        let down = eval(p)?;
        p.value.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    p.zero_grad();
    Ok(worst)
}
