//! Error types shared across the crate.
//!
//! Recoverable failures (I/O, parsing, configuration validation) surface as
//! [`Error`] values. Violations of internal numeric contracts — shape
//! mismatches inside math kernels, out-of-range indices after validation —
//! panic instead, since they indicate programming errors rather than bad
//! input.

use std::path::PathBuf;

/// Crate-wide error type for fallible, user-facing operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The underlying reason lives in the source chain, not the message, so
    /// chain-printing reporters do not repeat it.
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("checkpoint error in {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a path to an `std::io::Error`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
