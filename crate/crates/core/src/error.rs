use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HocError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HocError {
    /// A caller passed arguments that violate an operation's contract.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data is unusable (bad label, zero-norm feature row, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A required piece of the dataset is missing.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HocError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        HocError::Argument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        HocError::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HocError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        HocError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
