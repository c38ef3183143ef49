use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    Data(String),

    /// The eigensolver failed on a particular realization.
    #[error("eigensolver failed for realization seed {seed}: {reason}")]
    Computation { seed: u64, reason: String },

    #[error("fit failed: {reason}")]
    Fit { reason: String, diagnostics: Vec<(String, f64)> },

    #[error("out of range: {0}")]
    Range(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn fit(reason: impl Into<String>) -> Self {
        Error::Fit { reason: reason.into(), diagnostics: Vec::new() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Data(_) => "data",
            Error::Computation { .. } => "computation",
            Error::Fit { .. } => "fit",
            Error::Range(_) => "range",
            Error::Io { .. } => "io",
            Error::Serialization(_) => "serialization",
        }
    }
}
