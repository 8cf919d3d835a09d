//! Prototype nearest-neighbour and ridge-regression base learners, plus the
//! uniform fit/score contract shared with the LSSVM.

use std::fmt;
use std::str::FromStr;

use crate::coding::argmax_rows;
use crate::episode::Support;
use crate::error::{Error, Result};
use crate::lssvm::{fit_lssvm, kernel_matrix, KernelSpec, LssvmConfig, LssvmModel};
use crate::numerics::{squared_distance, Cholesky, Matrix};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LearnerKind {
    PrototypeNn,
    Ridge,
    #[default]
    Lssvm,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::PrototypeNn => "nn",
            LearnerKind::Ridge => "rr",
            LearnerKind::Lssvm => "lssvm",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Self::PrototypeNn),
            "rr" => Ok(Self::Ridge),
            "lssvm" => Ok(Self::Lssvm),
            other => Err(Error::Config(format!("unknown learner `{other}` (nn|rr|lssvm)"))),
        }
    }
}

/// Which base learner to fit, with that learner's parameters only.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseLearnerSpec {
    PrototypeNn,
    Ridge { lambda: f64 },
    Lssvm(LssvmConfig),
}

impl BaseLearnerSpec {
    pub fn kind(&self) -> LearnerKind {
        match self {
            BaseLearnerSpec::PrototypeNn => LearnerKind::PrototypeNn,
            BaseLearnerSpec::Ridge { .. } => LearnerKind::Ridge,
            BaseLearnerSpec::Lssvm(_) => LearnerKind::Lssvm,
        }
    }
}

/// Class means of the support features.
#[derive(Debug, Clone)]
pub struct PrototypeModel {
    pub prototypes: Matrix,
}

impl PrototypeModel {
    /// `−‖x − p_c‖²` for each query row and class.
    pub fn scores(&self, query_x: &Matrix) -> Result<Matrix> {
        if query_x.cols() != self.prototypes.cols() {
            return Err(Error::ShapeMismatch(format!(
                "query dim {} vs prototype dim {}",
                query_x.cols(),
                self.prototypes.cols()
            )));
        }
        let c = self.prototypes.rows();
        let mut out = Matrix::zeros(query_x.rows(), c);
        for (q, row) in query_x.row_iter().enumerate() {
            for (k, s) in out.row_mut(q).iter_mut().enumerate() {
                *s = -squared_distance(row, self.prototypes.row(k));
            }
        }
        Ok(out)
    }
}

/// Per-class mean rows of `x` under `labels`. Every class must be present.
pub fn class_means(x: &Matrix, labels: &[usize], classes: usize) -> Matrix {
    let mut means = Matrix::zeros(classes, x.cols());
    let mut counts = vec![0usize; classes];
    for (row, &y) in x.row_iter().zip(labels) {
        counts[y] += 1;
        for (m, v) in means.row_mut(y).iter_mut().zip(row) {
            *m += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            let inv = 1.0 / n as f64;
            means.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        }
    }
    means
}

pub fn fit_prototype_nn(support: Support<'_>) -> Result<PrototypeModel> {
    support.validate()?;
    Ok(PrototypeModel { prototypes: class_means(support.x, support.y, support.classes) })
}

/// Kernel ridge regression onto one-vs-all `±1` targets, solved in the dual.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    support_x: Matrix,
    /// `(K + λI)⁻¹ T`, `n×C`.
    dual: Matrix,
}

impl RidgeModel {
    pub fn scores(&self, query_x: &Matrix) -> Result<Matrix> {
        kernel_matrix(&KernelSpec::Linear, query_x, &self.support_x)?.matmul(&self.dual)
    }

    pub fn dual_coefficients(&self) -> &Matrix {
        &self.dual
    }
}

pub fn fit_ridge(support: Support<'_>, lambda: f64) -> Result<RidgeModel> {
    support.validate()?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge lambda must be > 0, got {lambda}")));
    }
    let n = support.x.rows();
    let mut gram = kernel_matrix(&KernelSpec::Linear, support.x, support.x)?;
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let mut targets = Matrix::filled(n, support.classes, -1.0);
    for (i, &y) in support.y.iter().enumerate() {
        targets[(i, y)] = 1.0;
    }
    let dual = Cholesky::factor(&gram)?.solve(&targets)?;
    Ok(RidgeModel { support_x: support.x.clone(), dual })
}

#[derive(Debug, Clone)]
pub enum FittedLearner {
    PrototypeNn(PrototypeModel),
    Ridge(RidgeModel),
    Lssvm(LssvmModel),
}

impl FittedLearner {
    pub fn kind(&self) -> LearnerKind {
        match self {
            FittedLearner::PrototypeNn(_) => LearnerKind::PrototypeNn,
            FittedLearner::Ridge(_) => LearnerKind::Ridge,
            FittedLearner::Lssvm(_) => LearnerKind::Lssvm,
        }
    }
}

pub fn learner_fit(spec: &BaseLearnerSpec, support: Support<'_>) -> Result<FittedLearner> {
    Ok(match spec {
        BaseLearnerSpec::PrototypeNn => FittedLearner::PrototypeNn(fit_prototype_nn(support)?),
        BaseLearnerSpec::Ridge { lambda } => FittedLearner::Ridge(fit_ridge(support, *lambda)?),
        BaseLearnerSpec::Lssvm(cfg) => FittedLearner::Lssvm(fit_lssvm(support, cfg)?),
    })
}

/// Class scores, higher meaning more likely.
pub fn learner_score(spec: &BaseLearnerSpec, model: &FittedLearner, query_x: &Matrix) -> Result<Matrix> {
    if spec.kind() != model.kind() {
        return Err(Error::KindMismatch { spec: spec.kind().name(), model: model.kind().name() });
    }
    match model {
        FittedLearner::PrototypeNn(m) => m.scores(query_x),
        FittedLearner::Ridge(m) => m.scores(query_x),
        FittedLearner::Lssvm(m) => Ok(m.predict(query_x)?.1),
    }
}

/// Argmax labels and scores.
pub fn learner_predict(spec: &BaseLearnerSpec, model: &FittedLearner, query_x: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    if let (BaseLearnerSpec::Lssvm(_), FittedLearner::Lssvm(m)) = (spec, model) {
        return m.predict(query_x);
    }
    let scores = learner_score(spec, model, query_x)?;
    Ok((argmax_rows(&scores), scores))
}

/// Fraction of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
