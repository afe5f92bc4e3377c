use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A model or input failed validation. `path` names the offending field.
    #[error("{path}: {message}")]
    Validation { path: String, message: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("{0}")]
    Numeric(String),

    /// The pipeline proved the network cannot be stabilized; `stage` is the
    /// first stage that failed.
    #[error("not stabilizable at stage `{stage}`: {reason}")]
    NotStabilizable { stage: String, reason: String },

    /// Internal invariant broken. Always a bug.
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("inadmissible profile z={z} at step {step} (initial state {initial})")]
    Inadmissible { z: usize, step: usize, initial: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotStabilizable { .. } => 2,
            Error::Validation { .. } | Error::Parse(_) | Error::Dimension(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io { .. } => 1,
            Error::Index(_) | Error::Internal(_) | Error::Inadmissible { .. } => 1,
        }
    }
}
