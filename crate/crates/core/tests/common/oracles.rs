//! Independent reference computations used by unit and integration tests.
//!
//! Everything here works from raw formulas with plain loops and never calls
//! the solver paths it is used to check.

use fsl_core::numerics::Matrix;

/// Gauss-Jordan elimination with partial pivoting on `[a | rhs]`.
pub fn gauss_jordan_solve(a: &Matrix, rhs: &Matrix) -> Matrix {
    let n = a.rows();
    let m = rhs.cols();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
            row.extend((0..m).map(|j| rhs[(i, j)]));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular system in oracle");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    for c in 0..n + m {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
    }
    let data: Vec<f64> = aug.iter().flat_map(|row| row[n..].to_vec()).collect();
    Matrix::new(n, m, data).unwrap()
}

/// Population covariance of the rows of `points`.
pub fn covariance(points: &Matrix) -> Vec<Vec<f64>> {
    let (m, d) = points.shape();
    let mean: Vec<f64> = (0..d)
        .map(|c| (0..m).map(|r| points[(r, c)]).sum::<f64>() / m as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            cov[i][j] = (0..m)
                .map(|r| (points[(r, i)] - mean[i]) * (points[(r, j)] - mean[j]))
                .sum::<f64>()
                / m as f64;
        }
    }
    cov
}

/// Top two eigenvalues of a symmetric PSD matrix by power iteration with
/// deflation, plus its trace.
pub fn top2_eigen_power(a: &[Vec<f64>]) -> (f64, f64, f64) {
    let d = a.len();
    let apply = |m: &[Vec<f64>], v: &[f64]| -> Vec<f64> {
        (0..d).map(|i| (0..d).map(|j| m[i][j] * v[j]).sum()).collect()
    };
    let power = |m: &[Vec<f64>]| -> (f64, Vec<f64>) {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = apply(m, &v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
            lambda = v.iter().zip(apply(m, &v)).map(|(a, b)| a * b).sum();
        }
        (lambda, v)
    };
    let (l1, v1) = power(a);
    let deflated: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| a[i][j] - l1 * v1[i] * v1[j]).collect())
        .collect();
    let (l2, _) = power(&deflated);
    let trace = (0..d).map(|i| a[i][i]).sum();
    (l1, l2, trace)
}

/// Central finite-difference gradient of a scalar function of a flat parameter vector.
pub fn central_diff(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest elementwise relative error, with the denominator floored at `floor`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
