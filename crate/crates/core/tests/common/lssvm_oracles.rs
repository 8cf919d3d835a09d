//! Reference LSSVM computations straight from the unreduced KKT system.

use fsl_core::lssvm::{KernelSpec, LssvmConfig};
use fsl_core::numerics::Matrix;

use super::oracles::gauss_jordan_solve;

pub struct FullSolution {
    /// `alphas[l][i]` over every support row (rows coded 0 get `α = γ`).
    pub alphas: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// Solves the stacked `(L + L·n)` system
///
/// ```text
/// [ −s·I  Yᵀ ] [b]   [0]
/// [  Y    Ω  ] [α] = [1]
/// ```
///
/// with block-diagonal `Ω` and `Y` over all subproblems, including zero-coded
/// rows, by dense Gauss-Jordan elimination.
pub fn full_kkt_solve(x: &Matrix, encoded: &[Vec<i8>], cfg: &LssvmConfig) -> FullSolution {
    let n = x.rows();
    let l_count = encoded[0].len();
    let size = l_count + l_count * n;
    let mut a = vec![0.0; size * size];
    let mut rhs = vec![0.0; size];
    let s = cfg.bias_stationarity_scale;
    let idx = |l: usize, i: usize| l_count + l * n + i;
    for l in 0..l_count {
        a[l * size + l] = -s;
        for i in 0..n {
            let yi = encoded[i][l] as f64;
            a[l * size + idx(l, i)] = yi;
            a[idx(l, i) * size + l] = yi;
            rhs[idx(l, i)] = 1.0;
            for j in 0..n {
                let yj = encoded[j][l] as f64;
                let mut o = yi * yj * cfg.kernel.eval(x.row(i), x.row(j));
                if i == j {
                    o += 1.0 / cfg.gamma;
                }
                a[idx(l, i) * size + idx(l, j)] = o;
            }
        }
    }
    let sol = gauss_jordan_solve(
        &Matrix::new(size, size, a).unwrap(),
        &Matrix::new(size, 1, rhs).unwrap(),
    );
    FullSolution {
        biases: (0..l_count).map(|l| sol[(l, 0)]).collect(),
        alphas: (0..l_count).map(|l| (0..n).map(|i| sol[(idx(l, i), 0)]).collect()).collect(),
    }
}

/// `c_l(q) = Σ_i α_il y_il K(x_i, q) + b_l` by plain loops.
pub fn naive_decision_values(
    x: &Matrix,
    encoded: &[Vec<i8>],
    sol: &FullSolution,
    kernel: &KernelSpec,
    queries: &Matrix,
) -> Matrix {
    let l_count = sol.biases.len();
    let mut out = vec![0.0; queries.rows() * l_count];
    for q in 0..queries.rows() {
        for l in 0..l_count {
            let mut v = sol.biases[l];
            for i in 0..x.rows() {
                v += sol.alphas[l][i] * encoded[i][l] as f64 * kernel.eval(x.row(i), queries.row(q));
            }
            out[q * l_count + l] = v;
        }
    }
    Matrix::new(queries.rows(), l_count, out).unwrap()
}

/// Primal objective of subproblem `l` for a linear kernel at `(w, b)`, with
/// slacks set by the equality constraints.
pub fn primal_objective(x: &Matrix, encoded: &[Vec<i8>], l: usize, w: &[f64], b: f64, gamma: f64) -> f64 {
    let mut obj = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    for i in 0..x.rows() {
        let y = encoded[i][l] as f64;
        if y == 0.0 {
            continue;
        }
        let f: f64 = w.iter().zip(x.row(i)).map(|(a, c)| a * c).sum::<f64>() + b;
        let e = 1.0 - y * f;
        obj += 0.5 * gamma * e * e;
    }
    obj
}
