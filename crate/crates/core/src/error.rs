use thiserror::Error;

pub type Result<T> = std::result::Result<T, GrmError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrmError {
    #[error("infeasible natural parameter: {0}")]
    InfeasibleNaturalParam(String),
    #[error("value outside family domain: {0}")]
    Domain(String),
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("concavity of g changes sign inside [{lo}, {hi}) near {at}")]
    NonConstantConcavity { lo: f64, hi: f64, at: f64 },
    #[error("bound uncertainty {uncertainty:e} exceeds tolerance {tolerance:e} after {pieces} pieces")]
    Precision {
        uncertainty: f64,
        tolerance: f64,
        pieces: usize,
    },
    #[error("direction is not on the probability simplex: {0}")]
    Simplex(String),
    #[error("conditional could not be normalized: {0}")]
    Normalization(String),
    #[error("line search failed on node {node} at iteration {iter}: {detail}")]
    LineSearchFailure {
        node: usize,
        iter: usize,
        detail: String,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("range error at line {line}: {msg}")]
    Range { line: usize, msg: String },
    #[error("unsupported model format version {0}")]
    Version(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GrmError {
    fn from(e: std::io::Error) -> Self {
        GrmError::Io(e.to_string())
    }
}
