use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("split has {available} classes, episode needs {needed}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class} has {available} samples, episode needs {needed}")]
    InsufficientSamples { class: u32, needed: usize, available: usize },
    #[error("class {0} is not present in the feature bank")]
    UnknownClass(u32),

    #[error("bad magic bytes in {0}")]
    BadMagic(PathBuf),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("non-finite feature value at sample {0}")]
    NonFiniteFeature(usize),
    #[error("inconsistent feature dimension: {0}")]
    InconsistentDim(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("subproblem {0} has samples of only one sign")]
    DegenerateSubproblem(usize),
    #[error("kernel {0} has no gradient rule")]
    UnsupportedKernelGradient(String),
    #[error("learner kind mismatch: spec is {spec}, model is {model}")]
    KindMismatch { spec: &'static str, model: &'static str },
    #[error("forward cache is stale (cache version {cache}, params version {params})")]
    StaleCache { cache: u64, params: u64 },
    #[error("query set is empty")]
    EmptyQuery,
    #[error("non-finite loss at epoch {epoch} batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("bad flag: {0}")]
    BadFlag(String),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonFinite(_)
                | Error::DegenerateInput(_)
                | Error::DegenerateSubproblem(_)
                | Error::NonFiniteLoss { .. }
        )
    }

    /// Process exit code for a command that failed with this error: 2 for
    /// configuration problems, 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            e if e.is_numeric() => 3,
            Error::UnknownKey(_)
            | Error::Config(_)
            | Error::BadFlag(_)
            | Error::InvalidArgument(_)
            | Error::InsufficientClasses { .. }
            | Error::InsufficientSamples { .. }
            | Error::KindMismatch { .. } => 2,
            _ => 1,
        }
    }
}
