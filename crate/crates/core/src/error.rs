use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The variants map onto the command line exit codes: configuration
/// problems exit with 2, data problems with 3 and training faults with 4.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed, missing or inconsistent data on disk or in memory.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite loss, divergence or other optimisation failure.
    #[error("training fault: {0}")]
    TrainingFault(String),

    /// Internal invariant violated (shape mismatch inside the model).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Domain(_) | Error::Data(_) | Error::Io { .. } => 3,
            Error::TrainingFault(_) | Error::Internal(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
