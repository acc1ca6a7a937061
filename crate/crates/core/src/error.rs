use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure at frame {frame}: {message}")]
    NumericalFailure {
        frame: usize,
        message: String,
        /// Loss accumulated before the failing frame, when a loss was being tracked.
        running_loss: Option<f64>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(frame: usize, msg: impl Into<String>) -> Self {
        Error::NumericalFailure {
            frame,
            message: msg.into(),
            running_loss: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::NumericalFailure { .. } => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
            Error::Internal(_) => 1,
        }
    }
}
