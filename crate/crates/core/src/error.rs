use std::io;

use thiserror::Error;

/// Errors produced by dataset ingestion, index construction, search and
/// (de)serialization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("degenerate hyperplane query: normal vector is all zeros")]
    DegenerateQuery,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed {format} data: {reason}")]
    Malformed {
        format: &'static str,
        reason: String,
    },

    #[error("empty dataset")]
    Empty,

    #[error("k = {k} is out of range for {n} points")]
    KOutOfRange { k: usize, n: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("ground truth unavailable: {0}")]
    MissingGroundTruth(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn malformed(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Malformed {
            format,
            reason: reason.into(),
        }
    }
}
