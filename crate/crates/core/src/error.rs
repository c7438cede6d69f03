use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input vector or matrix does not have the dimension the callee expects.
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    InputShape { expected: usize, actual: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    /// A structured text file (weights, centroids) could not be parsed.
    #[error("parse error in {context} at line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// A binary file does not follow the expected layout (IDX magic, truncated payload).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// A statistic is undefined for the given input (e.g. zero variance).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
