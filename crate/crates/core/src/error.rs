//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("annotation error in {source_name} at row {row}: {message}")]
    Annotation {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("invalid track {video_id}: {message}")]
    Track { video_id: String, message: String },

    #[error("invalid phase set: {0}")]
    PhaseSet(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("malformed {kind} file {path}: {message}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error("{0}")]
    Empty(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics (NaN/Inf, diverged training).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
