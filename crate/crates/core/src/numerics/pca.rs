//! Two-component PCA via a cyclic Jacobi eigensolver.

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix (row-major `n x n`).
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Projects mean-centred `points` onto their top two principal components.
///
/// Each component's sign is fixed so its first non-negligible loading is
/// positive. Components with (numerically) zero variance are replaced by
/// zeros.
pub fn pca_project_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if points.len() < 3 {
        return Err(Error::Argument(format!(
            "PCA needs at least 3 points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if d < 2 {
        return Err(Error::Argument("PCA needs dimension >= 2".into()));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("ragged point set".into()));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centred: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut cov = vec![0.0; d * d];
    for c in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    cov.iter_mut().for_each(|x| *x /= n - 1.0);

    let (values, mut vectors) = symmetric_eigen(&cov, d);
    let top = values[0].abs().max(f64::MIN_POSITIVE);
    let mut keep = [true; 2];
    for (k, vec) in vectors.iter_mut().take(2).enumerate() {
        if values[k] <= 1e-12 * top || values[k] <= 0.0 {
            keep[k] = false;
            continue;
        }
        if let Some(first) = vec.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    Ok(centred
        .iter()
        .map(|c| {
            let mut out = [0.0; 2];
            for k in 0..2 {
                if keep[k] {
                    out[k] = super::ops::dot(c, &vectors[k]);
                }
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = xs.clone().count() as f64;
        let m = xs.clone().sum::<f64>() / n;
        xs.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn two_dim_input_preserves_total_variance() {
        let pts = vec![
            vec![1.0, 2.0],
            vec![3.0, 1.0],
            vec![-1.0, 0.5],
            vec![0.0, -2.0],
        ];
        let out = pca_project_2d(&pts).unwrap();
        let vin = variance(pts.iter().map(|p| p[0])) + variance(pts.iter().map(|p| p[1]));
        let vout = variance(out.iter().map(|p| p[0])) + variance(out.iter().map(|p| p[1]));
        assert!((vin - vout).abs() < 1e-10);
    }

    #[test]
    fn collinear_points_collapse_second_axis() {
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let t = i as f64;
                vec![t, 2.0 * t + 1.0, -t]
            })
            .collect();
        let out = pca_project_2d(&pts).unwrap();
        assert!(out.iter().all(|p| p[1].abs() < 1e-9));
    }

    #[test]
    fn rejects_small_inputs() {
        assert!(pca_project_2d(&[vec![1.0, 2.0], vec![0.0, 1.0]]).is_err());
        assert!(pca_project_2d(&[vec![1.0], vec![0.0], vec![2.0]]).is_err());
    }

    #[test]
    fn jacobi_diagonalises() {
        let m = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, vecs) = symmetric_eigen(&m, 3);
        for (lam, v) in vals.iter().zip(&vecs) {
            for i in 0..3 {
                let mv: f64 = (0..3).map(|j| m[i * 3 + j] * v[j]).sum();
                assert!((mv - lam * v[i]).abs() < 1e-12);
            }
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }
}
