use thiserror::Error;

/// Errors raised by the numeric library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("budget of {requested} exceeds the {available} unlabeled samples")]
    Budget { requested: usize, available: usize },

    #[error("training diverged at batch {batch}: {reason}")]
    Divergence { batch: usize, reason: String },

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
