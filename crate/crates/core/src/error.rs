use thiserror::Error;

/// Errors surfaced by the clustering engine and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {needed} points, have {have}")]
    InsufficientData { needed: u64, have: u64 },

    /// The linear system behind the trace estimators has a (near) zero
    /// denominator K.
    #[error("degenerate trace system: |K| = {k:e} below tolerance {tol:e}")]
    DegenerateSystem { k: f64, tol: f64 },

    /// The 2x2 weight system is singular, e.g. for an exactly diagonal S.
    #[error("degenerate shrinkage geometry: det = {det:e}")]
    DegenerateGeometry { det: f64 },

    #[error("matrix is not symmetric positive-definite")]
    NotPositiveDefinite,

    #[error("no clusters to pool")]
    NoClusters,

    #[error("dimension mismatch at record {position}: expected {expected}, got {actual}")]
    StreamDimension {
        position: u64,
        expected: usize,
        actual: usize,
    },

    #[error("label/event mismatch: {0}")]
    LabelMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("serialization error: {0}")]
    Serde(String),

    /// Internal bookkeeping broke (point balance, memory bound).
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
