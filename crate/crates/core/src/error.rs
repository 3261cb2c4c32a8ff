use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record violated a schema invariant. `location` is usually `file:line`.
    #[error("{location}: {message}")]
    Validation { location: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// More ground-truth triplets than prediction slots.
    #[error("{context}: {gt} ground-truth triplets but only {queries} queries")]
    Infeasible {
        context: String,
        gt: usize,
        queries: usize,
    },

    #[error("streams are misaligned: {0}")]
    Alignment(String),
}

impl Error {
    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Infeasible { .. } => 3,
            Error::Validation { .. } | Error::InvalidArgument(_) | Error::Alignment(_) => 1,
        }
    }
}
