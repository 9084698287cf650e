use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the dictionary learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("shape mismatch: {what} expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("supervised cost requires labels on both measures")]
    MissingLabels,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("label row {row} is not on the probability simplex (sum = {sum})")]
    NotOnSimplex { row: usize, sum: f64 },

    #[error("transport problem did not reach an optimal solution: {0}")]
    Solver(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("{path}: row {row}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
