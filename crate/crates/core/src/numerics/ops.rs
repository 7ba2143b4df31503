//! Vector primitives and their hand-written backward passes.
//!
//! All reductions run left to right so results are bit-reproducible.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector with norm {n}"
        )));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Gradient of `u = v / |v|` w.r.t. `v`, given `u`, `|v|` and `du`.
pub fn l2_normalize_backward(unit: &[f64], input_norm: f64, d_unit: &[f64]) -> Vec<f64> {
    let proj = dot(unit, d_unit);
    unit.iter()
        .zip(d_unit)
        .map(|(u, du)| (du - u * proj) / input_norm)
        .collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `log(sum(exp(x)))` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of `logits / tau`.
pub fn softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if logits.is_empty() {
        return Err(Error::Argument("softmax over empty row".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite logit".into()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| ((x - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// Cross-entropy `-log softmax(logits / tau)[target]` and its gradient
/// w.r.t. `logits`.
pub fn cross_entropy_temp(logits: &[f64], tau: f64, target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Invariant(format!(
            "target index {target} outside {} logits",
            logits.len()
        )));
    }
    let probs = softmax_temp(logits, tau)?;
    let scaled: Vec<f64> = logits.iter().map(|x| x / tau).collect();
    let loss = log_sum_exp(&scaled) - scaled[target];
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, p)| (p - if j == target { 1.0 } else { 0.0 }) / tau)
        .collect();
    Ok((loss, grad))
}

/// Cosine similarity; errors on a zero-norm operand.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(Error::Degenerate("cosine of zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn normalize_three_four() {
        let u = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normalize_random_has_unit_norm() {
        let mut r = Rng::new(1);
        for _ in 0..200 {
            let v = r.normal_vec(16, 3.0);
            assert!((norm(&l2_normalize(&v).unwrap()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_temp(&[0.3; 4], 0.7).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        assert!(softmax_temp(&[1.0], 0.0).is_err());
        assert!(softmax_temp(&[1.0], -1.0).is_err());

        // scalar recomputation
        let p = softmax_temp(&[2.0, 1.0, 0.0], 1.0).unwrap();
        let z = 2f64.exp() + 1f64.exp() + 1.0;
        let want = [2f64.exp() / z, 1f64.exp() / z, 1.0 / z];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }

        // larger temperature flattens toward uniform, monotonically
        let mut prev = f64::INFINITY;
        for tau in [0.1, 1.0, 10.0, 100.0, 1e4] {
            let gap = softmax_temp(&[1.0, 0.0], tau).unwrap()[0] - 0.5;
            assert!(gap > 0.0 && gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax_temp(&[1000.0, 999.0], 0.01).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_sim(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-15);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, g) = cross_entropy_temp(&[0.2, -0.1, 0.5], 0.5, 1).unwrap();
        assert!(loss > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let (l1, _) = cross_entropy_temp(&[0.4], 0.01, 0).unwrap();
        assert_eq!(l1, 0.0);
    }
}
