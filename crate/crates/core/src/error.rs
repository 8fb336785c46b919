use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum HieroError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has zero norm")]
    ZeroNormRow { row: usize },
    #[error("row {row} has zero degree")]
    ZeroDegree { row: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("size mismatch in {path}: {detail}")]
    SizeMismatch { path: PathBuf, detail: String },
    #[error("timestamps not strictly increasing at index {index} ({prev} >= {next})")]
    NonIncreasingTimestamps { index: usize, prev: f64, next: f64 },
    #[error("schema violation in field `{field}`: {detail}")]
    Schema { field: String, detail: String },
    #[error("empty batch: no node or narration contributed to the loss")]
    EmptyBatch,
    #[error("non-finite gradient at coordinate {0}")]
    NonFiniteGradient(usize),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, HieroError>;

impl HieroError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HieroError::Io { path: path.into(), source }
    }

    pub(crate) fn schema(field: impl Into<String>, detail: impl Into<String>) -> Self {
        HieroError::Schema { field: field.into(), detail: detail.into() }
    }
}
