use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv")]
    Csv(#[from] csv::Error),

    #[error("malformed json")]
    Json(#[from] serde_json::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("invalid feature value at row {row}, column {col}")]
    InvalidFeature { row: usize, col: usize },

    #[error("label column is not binary (row {row}: `{value}`)")]
    NonBinaryLabel { row: usize, value: String },

    #[error("row {row} has {got} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("line {line}: feature index {index} appears twice")]
    DuplicateIndex { line: usize, index: usize },

    #[error("line {line}: negative feature index `{token}`")]
    NegativeIndex { line: usize, token: String },

    #[error("line {line}: feature indices must be strictly increasing")]
    UnsortedIndex { line: usize },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("dataset must have at least one row and one feature")]
    EmptyDataset,

    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("relabel of index {index} keeps its label {label}")]
    NoOpRelabel { index: usize, label: u8 },

    #[error("fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),

    #[error("dataset has no group tags")]
    MissingTags,

    #[error("tag `{0}` does not occur in the dataset")]
    UnknownTag(String),

    #[error("vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("regularization strength must be positive and finite, got {0}")]
    InvalidLambda(f64),

    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),

    #[error("newton did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("hessian is not numerically positive definite")]
    NotPositiveDefinite,

    #[error("iterative solve stalled after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("inverse square root of the hessian needs a dense factor (dimension {dim} exceeds dense limit)")]
    HessianSqrtUnavailable { dim: usize },

    #[error("flip set is empty, nothing to verify")]
    NothingToVerify,

    #[error("exhaustive search over {rows} rows up to size {max_k} exceeds the budget")]
    BudgetExceeded { rows: usize, max_k: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::NotPositiveDefinite
                | Error::SolverFailure { .. }
                | Error::HessianSqrtUnavailable { .. }
        )
    }
}
