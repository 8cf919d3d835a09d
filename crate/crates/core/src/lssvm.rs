//! Multi-class least-squares SVM.
//!
//! Each binary subproblem `l` of the coding matrix is fit in the dual. The
//! KKT conditions of
//!
//! ```text
//! min  Σ_l ½(w_lᵀw_l + b_l²) + γ/2 Σ_i e_il²
//! s.t. y_il (w_lᵀφ(x_i) + b_l) = 1 − e_il
//! ```
//!
//! are `w_l = Σ_i α_il y_il φ(x_i)`, `e_il = α_il / γ`, `b_l = y_lᵀ α_l` and
//! `Ω_l α_l + y_l b_l = 1` with `Ω_l[i,j] = y_i y_j K(x_i,x_j) + δ_ij/γ`.
//! Substituting the bias row leaves one SPD system per subproblem,
//! `(Ω_l + y_l y_lᵀ) α_l = 1`, solved by Cholesky. Samples whose code is 0 in
//! column `l` do not take part in subproblem `l`.
//!
//! Gradients with respect to the features go through the solve via the
//! implicit function theorem: for `G α = 1`, `∂L/∂G = −u αᵀ` with
//! `u = G⁻¹ ∂L/∂α`, which reuses the stored factor.

use std::fmt;
use std::str::FromStr;

use crate::coding::{argmax_rows, build_coding_matrix, decode_scores, encode_labels, CodingMatrix, CodingScheme, DecodeMode};
use crate::episode::Support;
use crate::error::{Error, Result};
use crate::numerics::{dot, squared_distance, Cholesky, Matrix};
use crate::rng::RngState;

/// Default regularization γ.
pub const DEFAULT_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KernelSpec {
    #[default]
    Linear,
    Rbf {
        sigma: f64,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidArgument(format!("rbf sigma must be > 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Rbf { sigma } => (-squared_distance(a, b) / (2.0 * sigma * sigma)).exp(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
        }
    }

    /// Whether [`lssvm_vjp`] knows this kernel's derivative.
    pub fn has_gradient(&self) -> bool {
        matches!(self, KernelSpec::Linear | KernelSpec::Rbf { .. })
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kernel kind from its config name; RBF gets `sigma`.
pub fn parse_kernel(name: &str, sigma: f64) -> Result<KernelSpec> {
    match name {
        "linear" => Ok(KernelSpec::Linear),
        "rbf" => Ok(KernelSpec::Rbf { sigma }),
        other => Err(Error::Config(format!("unknown kernel `{other}` (linear|rbf)"))),
    }
}

/// Gram matrix with entry `(i, j) = K(xa_i, xb_j)`.
pub fn kernel_matrix(spec: &KernelSpec, xa: &Matrix, xb: &Matrix) -> Result<Matrix> {
    if xa.cols() != xb.cols() {
        return Err(Error::ShapeMismatch(format!(
            "kernel between dims {} and {}",
            xa.cols(),
            xb.cols()
        )));
    }
    match spec {
        KernelSpec::Linear => xa.matmul_t(xb),
        KernelSpec::Rbf { .. } => {
            let mut k = Matrix::zeros(xa.rows(), xb.rows());
            for i in 0..xa.rows() {
                let a = xa.row(i);
                for j in 0..xb.rows() {
                    k[(i, j)] = spec.eval(a, xb.row(j));
                }
            }
            Ok(k)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LssvmConfig {
    pub gamma: f64,
    pub kernel: KernelSpec,
    pub coding: CodingScheme,
    /// Seed for random dense codes; the matrix depends only on this and the class count.
    pub coding_seed: u64,
    pub decode: DecodeMode,
    /// `s` in the bias stationarity row `s·b_l = y_lᵀα_l`. 1 is the KKT-consistent
    /// value; 2 reproduces the `−2I` block printed in some derivations.
    pub bias_stationarity_scale: f64,
}

impl Default for LssvmConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            kernel: KernelSpec::Linear,
            coding: CodingScheme::OneVsAll,
            coding_seed: 0,
            decode: DecodeMode::LinearApprox,
            bias_stationarity_scale: 1.0,
        }
    }
}

impl LssvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.bias_stationarity_scale > 0.0) {
            return Err(Error::InvalidArgument("bias_stationarity_scale must be > 0".into()));
        }
        self.kernel.validate()
    }

    pub fn coding_matrix(&self, classes: usize) -> Result<CodingMatrix> {
        let mut rng = RngState::from_seed(self.coding_seed);
        build_coding_matrix(self.coding, classes, Some(&mut rng))
    }
}

/// The reduced SPD system of one subproblem.
#[derive(Debug, Clone)]
pub struct KktBlock {
    /// Support rows taking part (nonzero code).
    pub active: Vec<usize>,
    /// `±1` targets of the active rows.
    pub y: Vec<f64>,
    /// `Ω_l` over the active rows.
    pub omega: Matrix,
    /// `G_l = Ω_l + y yᵀ / s`.
    pub system: Matrix,
}

/// Builds the per-subproblem blocks from a precomputed support Gram matrix.
/// `with_omega = false` leaves `omega` empty.
fn blocks_from_gram(
    gram: &Matrix,
    encoded_y: &[Vec<i8>],
    subproblems: usize,
    config: &LssvmConfig,
    with_omega: bool,
) -> Result<Vec<KktBlock>> {
    let inv_gamma = 1.0 / config.gamma;
    let inv_s = 1.0 / config.bias_stationarity_scale;
    (0..subproblems)
        .map(|l| {
            let active: Vec<usize> = (0..encoded_y.len()).filter(|&i| encoded_y[i][l] != 0).collect();
            let y: Vec<f64> = active.iter().map(|&i| encoded_y[i][l] as f64).collect();
            if !y.contains(&1.0) || !y.contains(&-1.0) {
                return Err(Error::DegenerateSubproblem(l));
            }
            let n = active.len();
            let mut omega = if with_omega { Matrix::zeros(n, n) } else { Matrix::zeros(0, 0) };
            let mut system = Matrix::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    let yy = y[a] * y[b];
                    let mut o = yy * gram[(active[a], active[b])];
                    if a == b {
                        o += inv_gamma;
                    }
                    if with_omega {
                        omega[(a, b)] = o;
                    }
                    system[(a, b)] = o + yy * inv_s;
                }
            }
            Ok(KktBlock { active, y, omega, system })
        })
        .collect()
}

/// Assembles `Ω_l` and `G_l` for every subproblem.
pub fn assemble_kkt_blocks(support_x: &Matrix, encoded_y: &[Vec<i8>], config: &LssvmConfig) -> Result<Vec<KktBlock>> {
    config.validate()?;
    if encoded_y.len() != support_x.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} encoded labels for {} support rows",
            encoded_y.len(),
            support_x.rows()
        )));
    }
    let subproblems = encoded_y.first().map_or(0, Vec::len);
    let gram = kernel_matrix(&config.kernel, support_x, support_x)?;
    blocks_from_gram(&gram, encoded_y, subproblems, config, true)
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub active: Vec<usize>,
    pub y: Vec<f64>,
    pub alpha: Vec<f64>,
    pub bias: f64,
    factor: Cholesky,
}

/// A fitted multi-class LSSVM.
#[derive(Debug, Clone)]
pub struct LssvmModel {
    config: LssvmConfig,
    coding: CodingMatrix,
    support_x: Matrix,
    encoded_y: Vec<Vec<i8>>,
    gram: Matrix,
    subproblems: Vec<Subproblem>,
    /// Linear kernel only: class weights `M Wᵀ` (classes × d) and biases `M b`.
    linear_classes: Option<(Matrix, Vec<f64>)>,
}

/// Largest KKT violations over all subproblems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `max_l ‖Ω_l α_l + y_l b_l − 1‖_∞`
    pub stationarity: f64,
    /// `max_l |s·b_l − y_lᵀα_l|`
    pub bias: f64,
}

pub fn fit_lssvm(support: Support<'_>, config: &LssvmConfig) -> Result<LssvmModel> {
    config.validate()?;
    support.validate()?;
    let coding = config.coding_matrix(support.classes)?;
    fit_lssvm_with_coding(support, config, coding)
}

/// Fits with an explicit coding matrix instead of the one derived from `config`.
pub fn fit_lssvm_with_coding(support: Support<'_>, config: &LssvmConfig, coding: CodingMatrix) -> Result<LssvmModel> {
    config.validate()?;
    if coding.classes() != support.classes {
        return Err(Error::ShapeMismatch(format!(
            "coding matrix for {} classes, support has {}",
            coding.classes(),
            support.classes
        )));
    }
    let encoded_y = encode_labels(&coding, support.y)?;
    let gram = kernel_matrix(&config.kernel, support.x, support.x)?;
    let blocks = blocks_from_gram(&gram, &encoded_y, coding.subproblems(), config, false)?;
    let ones_cache: Vec<f64> = vec![1.0; support.x.rows()];
    let subproblems = blocks
        .into_iter()
        .map(|block| {
            let factor = Cholesky::factor(&block.system)?;
            let alpha = factor.solve_vec(&ones_cache[..block.active.len()]);
            let bias = dot(&block.y, &alpha) / config.bias_stationarity_scale;
            Ok(Subproblem { active: block.active, y: block.y, alpha, bias, factor })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = LssvmModel {
        config: config.clone(),
        coding,
        support_x: support.x.clone(),
        encoded_y,
        gram,
        subproblems,
        linear_classes: None,
    };
    if config.kernel == KernelSpec::Linear {
        model.linear_classes = Some(model.class_weights());
    }
    Ok(model)
}

impl LssvmModel {
    pub fn config(&self) -> &LssvmConfig {
        &self.config
    }

    pub fn coding(&self) -> &CodingMatrix {
        &self.coding
    }

    pub fn support_x(&self) -> &Matrix {
        &self.support_x
    }

    pub fn encoded_y(&self) -> &[Vec<i8>] {
        &self.encoded_y
    }

    pub fn subproblems(&self) -> &[Subproblem] {
        &self.subproblems
    }

    pub fn kkt_residuals(&self) -> KktResiduals {
        let inv_gamma = 1.0 / self.config.gamma;
        let mut res = KktResiduals { stationarity: 0.0, bias: 0.0 };
        for sp in &self.subproblems {
            for (a, &ia) in sp.active.iter().enumerate() {
                let mut r = sp.y[a] * sp.bias - 1.0 + sp.alpha[a] * inv_gamma;
                for (b, &ib) in sp.active.iter().enumerate() {
                    r += sp.y[a] * sp.y[b] * self.gram[(ia, ib)] * sp.alpha[b];
                }
                res.stationarity = res.stationarity.max(r.abs());
            }
            let br = self.config.bias_stationarity_scale * sp.bias - dot(&sp.y, &sp.alpha);
            res.bias = res.bias.max(br.abs());
        }
        res
    }

    /// Dual expansion coefficients `α_il y_il` laid out as an `n×L` matrix (zero for inactive rows).
    fn expansion(&self) -> Matrix {
        let mut beta = Matrix::zeros(self.support_x.rows(), self.subproblems.len());
        for (l, sp) in self.subproblems.iter().enumerate() {
            for (a, &i) in sp.active.iter().enumerate() {
                beta[(i, l)] = sp.alpha[a] * sp.y[a];
            }
        }
        beta
    }

    fn class_weights(&self) -> (Matrix, Vec<f64>) {
        let d = self.support_x.cols();
        let classes = self.coding.classes();
        let mut w = Matrix::zeros(classes, d);
        let mut bias = vec![0.0; classes];
        for (l, sp) in self.subproblems.iter().enumerate() {
            for (r, cb) in bias.iter_mut().enumerate() {
                let m = self.coding.code(r)[l];
                if m == 0 {
                    continue;
                }
                let m = m as f64;
                *cb += m * sp.bias;
                let row = w.row_mut(r);
                for (a, &i) in sp.active.iter().enumerate() {
                    let coef = m * sp.alpha[a] * sp.y[a];
                    for (o, &x) in row.iter_mut().zip(self.support_x.row(i)) {
                        *o += coef * x;
                    }
                }
            }
        }
        (w, bias)
    }

    fn linear_class_scores(&self, query_x: &Matrix) -> Option<Result<Matrix>> {
        let (w, bias) = self.linear_classes.as_ref()?;
        Some(query_x.matmul_t(w).map(|mut s| {
            for q in 0..s.rows() {
                for (v, b) in s.row_mut(q).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            s
        }))
    }

    fn check_query(&self, query_x: &Matrix) -> Result<()> {
        if query_x.cols() != self.support_x.cols() {
            return Err(Error::ShapeMismatch(format!(
                "query dim {} vs support dim {}",
                query_x.cols(),
                self.support_x.cols()
            )));
        }
        Ok(())
    }

    /// `c_l(x) = Σ_i α_il y_il K(x_i, x) + b_l` for every query row and subproblem.
    pub fn decision_values(&self, query_x: &Matrix) -> Result<Matrix> {
        self.check_query(query_x)?;
        let cross = kernel_matrix(&self.config.kernel, &self.support_x, query_x)?;
        let mut c = cross.t_matmul(&self.expansion())?;
        for q in 0..c.rows() {
            for (v, sp) in c.row_mut(q).iter_mut().zip(&self.subproblems) {
                *v += sp.bias;
            }
        }
        Ok(c)
    }

    /// Labels and class scores with the configured decode mode.
    pub fn predict(&self, query_x: &Matrix) -> Result<(Vec<usize>, Matrix)> {
        if self.config.decode == DecodeMode::LinearApprox {
            if let Some(s) = self.linear_class_scores(query_x) {
                self.check_query(query_x)?;
                let s = s?;
                return Ok((argmax_rows(&s), s));
            }
        }
        let c = self.decision_values(query_x)?;
        decode_scores(&self.coding, &c, self.config.decode)
    }

    /// The differentiable class scores `s_r = Σ_l M[r,l] c_l`, whatever the decode mode.
    pub fn linear_scores(&self, query_x: &Matrix) -> Result<Matrix> {
        if let Some(s) = self.linear_class_scores(query_x) {
            self.check_query(query_x)?;
            return s;
        }
        let c = self.decision_values(query_x)?;
        Ok(decode_scores(&self.coding, &c, DecodeMode::LinearApprox)?.1)
    }
}

pub fn lssvm_predict(model: &LssvmModel, query_x: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    model.predict(query_x)
}

pub fn decision_values(model: &LssvmModel, query_x: &Matrix) -> Result<Matrix> {
    model.decision_values(query_x)
}

#[derive(Debug, Clone)]
pub struct LssvmGrads {
    pub support_x: Matrix,
    pub query_x: Matrix,
}

/// Pulls `∂L/∂scores` (for the linear class scores `s = C Mᵀ`) back to the
/// support and query features.
pub fn lssvm_vjp(model: &LssvmModel, query_x: &Matrix, upstream: &Matrix) -> Result<LssvmGrads> {
    model.check_query(query_x)?;
    let classes = model.coding.classes();
    if upstream.shape() != (query_x.rows(), classes) {
        return Err(Error::ShapeMismatch(format!(
            "upstream {}x{} for {} queries and {classes} classes",
            upstream.rows(),
            upstream.cols(),
            query_x.rows()
        )));
    }
    if !upstream.is_finite() {
        return Err(Error::NonFinite("upstream gradient"));
    }
    // s = C Mᵀ  ⇒  dC = dS M
    let d_c = upstream.matmul(&model.coding.to_matrix())?;
    lssvm_vjp_decision(model, query_x, &d_c)
}

/// Like [`lssvm_vjp`] but starting from `∂L/∂c` on the `m×L` decision values.
pub fn lssvm_vjp_decision(model: &LssvmModel, query_x: &Matrix, d_c: &Matrix) -> Result<LssvmGrads> {
    model.check_query(query_x)?;
    let kernel = model.config.kernel;
    if !kernel.has_gradient() {
        return Err(Error::UnsupportedKernelGradient(kernel.name().into()));
    }
    let n = model.support_x.rows();
    let m = query_x.rows();
    let subproblems = model.subproblems.len();
    if d_c.shape() != (m, subproblems) {
        return Err(Error::ShapeMismatch(format!(
            "decision gradient {}x{} for {m} queries and {subproblems} subproblems",
            d_c.rows(),
            d_c.cols()
        )));
    }
    let cross = kernel_matrix(&kernel, &model.support_x, query_x)?;
    let beta = model.expansion();
    // c = crossᵀ β + 1 bᵀ
    let d_cross = beta.matmul_t(d_c)?; // n×m
    let d_beta = cross.matmul(d_c)?; // n×L
    let inv_s = 1.0 / model.config.bias_stationarity_scale;
    let mut d_gram = Matrix::zeros(n, n);
    for (l, sp) in model.subproblems.iter().enumerate() {
        let d_bias: f64 = (0..m).map(|q| d_c[(q, l)]).sum();
        let d_alpha: Vec<f64> = sp
            .active
            .iter()
            .enumerate()
            .map(|(a, &i)| sp.y[a] * d_beta[(i, l)] + sp.y[a] * d_bias * inv_s)
            .collect();
        let u = sp.factor.solve_vec(&d_alpha);
        // dG = −u αᵀ, G[a,b] = y_a y_b (K[a,b] + 1/s) + δ/γ
        for (a, &ia) in sp.active.iter().enumerate() {
            for (b, &ib) in sp.active.iter().enumerate() {
                d_gram[(ia, ib)] -= sp.y[a] * sp.y[b] * u[a] * sp.alpha[b];
            }
        }
    }
    let (mut g_support, mut g_query) = (Matrix::zeros(n, query_x.cols()), Matrix::zeros(m, query_x.cols()));
    kernel_vjp(&kernel, &model.support_x, query_x, &cross, &d_cross, &mut g_support, &mut g_query);
    let sym = d_gram.add(&d_gram.transpose())?;
    match kernel {
        KernelSpec::Linear => {
            // K = X Xᵀ  ⇒  dX = (dK + dKᵀ) X
            g_support.add_assign(&sym.matmul(&model.support_x)?)?;
        }
        KernelSpec::Rbf { .. } => {
            let mut g2 = Matrix::zeros(n, query_x.cols());
            let mut scratch = Matrix::zeros(n, query_x.cols());
            kernel_vjp(&kernel, &model.support_x, &model.support_x, &model.gram, &d_gram, &mut g2, &mut scratch);
            g2.add_assign(&scratch)?;
            g_support.add_assign(&g2)?;
        }
    }
    Ok(LssvmGrads { support_x: g_support, query_x: g_query })
}

/// Accumulates the gradient of `Σ dK ∘ K(xa, xb)` into `ga` and `gb`.
fn kernel_vjp(kernel: &KernelSpec, xa: &Matrix, xb: &Matrix, k: &Matrix, dk: &Matrix, ga: &mut Matrix, gb: &mut Matrix) {
    match *kernel {
        KernelSpec::Linear => {
            let da = dk.matmul(xb).expect("shapes checked");
            let db = dk.t_matmul(xa).expect("shapes checked");
            ga.add_assign(&da).expect("shapes checked");
            gb.add_assign(&db).expect("shapes checked");
        }
        KernelSpec::Rbf { sigma } => {
            let inv = 1.0 / (sigma * sigma);
            let d = xa.cols();
            for i in 0..xa.rows() {
                for j in 0..xb.rows() {
                    let w = dk[(i, j)] * k[(i, j)] * inv;
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        let diff = xa[(i, c)] - xb[(j, c)];
                        ga[(i, c)] -= w * diff;
                        gb[(j, c)] += w * diff;
                    }
                }
            }
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_kernel(s, 1.0)
    }
}
