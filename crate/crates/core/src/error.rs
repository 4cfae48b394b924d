use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("measure {measure} cannot be applied to {representation} data")]
    RepresentationMismatch {
        measure: &'static str,
        representation: &'static str,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown parameter `{key}` for {family}")]
    UnknownParameter { family: &'static str, key: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category, used by the CLI for one-line failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. }
            | Error::ZeroVector
            | Error::RepresentationMismatch { .. }
            | Error::NonFinite { .. } => "data",
            Error::InvalidParameter(_) | Error::UnknownParameter { .. } => "params",
            Error::Unsupported(_) => "unsupported",
            Error::Format { .. } | Error::Json { .. } => "format",
            Error::Io { .. } => "io",
            Error::Numerical(_) => "numerical",
        }
    }
}
