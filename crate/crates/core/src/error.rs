//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the public API.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss kind {0} requires a reference parameter vector")]
    MissingReference(&'static str),

    #[error("non-finite value encountered in {context}: {detail}")]
    NonFinite { context: &'static str, detail: String },

    #[error("optimizer has no statistics yet (step_count = 0)")]
    NoStatistics,

    #[error("method {0} has a null constraint; constraint quantities are undefined")]
    NullConstraint(&'static str),

    #[error("add-on {addon} is incompatible with method {method}: {reason}")]
    IncompatibleAddOn {
        addon: String,
        method: String,
        reason: String,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
