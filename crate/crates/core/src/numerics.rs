//! Dense row-major matrices and the handful of kernels every other module
//! leans on: SPD solves, row-wise softmax and layer norm, and a 2-D PCA.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Pivot floor for the Cholesky factorization.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Checked constructor: `data.len()` must equal `rows * cols` and every entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for internal results whose shape is known by construction.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_parts(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a 0-column matrix still has rows
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "t_matmul ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_parts(self.rows, self.cols, data))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_parts(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_parts(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_parts(indices.len(), self.cols, data)
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(Error::ShapeMismatch(format!(
                "vstack {} columns onto {}",
                other.cols, self.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix::from_parts(self.rows + other.rows, cols, data))
    }

    /// Splits into the first `at` rows and the remainder.
    pub fn split_rows(&self, at: usize) -> (Matrix, Matrix) {
        let (a, b) = self.data.split_at(at * self.cols);
        (
            Matrix::from_parts(at, self.cols, a.to_vec()),
            Matrix::from_parts(self.rows - at, self.cols, b.to_vec()),
        )
    }

    fn check_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what} {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Sum of `f(a_i, b_i)` over four interleaved partial sums.
#[inline(always)]
fn paired_sum(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| f(x, y)).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 4] = x.try_into().expect("chunk of 4");
        let y: &[f64; 4] = y.try_into().expect("chunk of 4");
        acc = [acc[0] + f(x[0], y[0]), acc[1] + f(x[1], y[1]), acc[2] + f(x[2], y[2]), acc[3] + f(x[3], y[3])];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    paired_sum(a, b, |x, y| x * y)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    paired_sum(a, b, |x, y| (x - y) * (x - y))
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if n == 0 || a.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "cholesky needs a non-empty square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let scale = a.max_abs().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > PIVOT_FLOOR) {
                return Err(Error::NotPositiveDefinite { row: j, pivot: diag });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let l = &self.l;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[(k, i)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if rhs.rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "rhs has {} rows, system has {n}",
                rhs.rows()
            )));
        }
        let mut out = Matrix::zeros(n, rhs.cols());
        let mut col = vec![0.0; n];
        for c in 0..rhs.cols() {
            for r in 0..n {
                col[r] = rhs[(r, c)];
            }
            self.solve_in_place(&mut col);
            for r in 0..n {
                out[(r, c)] = col[r];
            }
        }
        Ok(out)
    }
}

/// Solves `a X = rhs` for symmetric positive definite `a`.
pub fn cholesky_solve(a: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    Cholesky::factor(a)?.solve(rhs)
}

/// Row-wise softmax with row-max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-row statistics kept by [`layer_norm_rows_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalized rows before the affine map.
    pub normalized: Matrix,
    /// `1 / sqrt(var + eps)` for each row.
    pub inv_std: Vec<f64>,
}

/// Row-wise layer normalization with affine `gain` and `bias`.
///
/// A row whose entries are all equal normalizes to zeros (so the output row is `bias`).
pub fn layer_norm_rows(m: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Result<Matrix> {
    layer_norm_rows_cached(m, gain, bias, eps).map(|(out, _)| out)
}

pub fn layer_norm_rows_cached(
    m: &Matrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    let d = m.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "layer norm over {d} columns with gain {} and bias {}",
            gain.len(),
            bias.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("layer norm eps must be > 0, got {eps}")));
    }
    let mut normalized = Matrix::zeros(m.rows(), d);
    let mut out = Matrix::zeros(m.rows(), d);
    let mut inv_std = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let constant = row.iter().all(|&v| v == row[0]);
        let nrow = normalized.row_mut(r);
        if !constant {
            for (n, &v) in nrow.iter_mut().zip(row) {
                *n = (v - mean) * inv;
            }
        }
        let orow = out.row_mut(r);
        for c in 0..d {
            orow[c] = gain[c] * nrow[c] + bias[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Backward pass of [`layer_norm_rows_cached`]: returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gain: &[f64], upstream: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let (n, d) = cache.normalized.shape();
    if upstream.shape() != (n, d) || gain.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "layer norm backward: upstream {}x{}, cache {n}x{d}, gain {}",
            upstream.rows(),
            upstream.cols(),
            gain.len()
        )));
    }
    let mut dx = Matrix::zeros(n, d);
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let xhat = cache.normalized.row(r);
        let dy = upstream.row(r);
        for c in 0..d {
            dgain[c] += dy[c] * xhat[c];
            dbias[c] += dy[c];
            dxhat[c] = dy[c] * gain[c];
        }
        let sum: f64 = dxhat.iter().sum();
        let sum_xhat: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
        let scale = cache.inv_std[r] / d as f64;
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = scale * (d as f64 * dxhat[c] - sum - xhat[c] * sum_xhat);
        }
    }
    Ok((dx, dgain, dbias))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors as columns.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch(format!("eigen of {}x{}", a.rows(), a.cols())));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let total: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok((values, vectors))
}

/// A fitted 2-component PCA.
#[derive(Debug, Clone)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// `d×2`, columns are the top two principal axes.
    pub axes: Matrix,
    pub eigenvalues: [f64; 2],
    pub total_variance: f64,
}

impl Pca2 {
    pub fn fit(points: &Matrix) -> Result<Self> {
        let (m, d) = points.shape();
        if m < 3 || d < 2 {
            return Err(Error::DegenerateInput(format!(
                "pca needs at least 3 points in at least 2 dimensions, got {m}x{d}"
            )));
        }
        let mut mean = vec![0.0; d];
        for row in points.row_iter() {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut cov = Matrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for row in points.row_iter() {
            for (c, (v, mu)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                *c = v - mu;
            }
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += centered[i] * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / m as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let total_variance: f64 = (0..d).map(|i| cov[(i, i)]).sum();
        let (values, vectors) = symmetric_eigen(&cov)?;
        if !(values[1] > 1e-12 * values[0].max(f64::MIN_POSITIVE)) || values[0] <= 0.0 {
            return Err(Error::DegenerateInput(
                "covariance has rank < 2 (points are collinear)".into(),
            ));
        }
        let mut axes = Matrix::zeros(d, 2);
        for k in 0..2 {
            let mut pivot = 0;
            for i in 0..d {
                if vectors[(i, k)].abs() > vectors[(pivot, k)].abs() {
                    pivot = i;
                }
            }
            let sign = if vectors[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d {
                axes[(i, k)] = sign * vectors[(i, k)];
            }
        }
        Ok(Self { mean, axes, eigenvalues: [values[0], values[1]], total_variance })
    }

    pub fn transform(&self, points: &Matrix) -> Result<Matrix> {
        if points.cols() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "pca fitted on {} dims, got {}",
                self.mean.len(),
                points.cols()
            )));
        }
        let mut out = Matrix::zeros(points.rows(), 2);
        for (r, row) in points.row_iter().enumerate() {
            for k in 0..2 {
                out[(r, k)] = row
                    .iter()
                    .zip(&self.mean)
                    .enumerate()
                    .map(|(i, (v, mu))| (v - mu) * self.axes[(i, k)])
                    .sum();
            }
        }
        Ok(out)
    }
}

/// Projects points onto their top two principal axes.
pub fn pca_2d(points: &Matrix) -> Result<Matrix> {
    Pca2::fit(points)?.transform(points)
}
