//! Error type shared by every layer of the crate.

use std::path::PathBuf;

/// Failure classes. The CLI maps each class onto a distinct exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration values or missing configuration sections.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (wrong length, bad index...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Optimisation produced a non-finite value.
    #[error("training diverged: {0}")]
    Training(String),
    /// A checkpoint or artifact failed to parse or verify.
    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }

    pub fn integrity(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
