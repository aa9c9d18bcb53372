use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, hyper-parameters or experiment settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad or missing input data: dataset files, labels, CSV curves.
    #[error("data error: {0}")]
    Data(String),

    /// A structural expectation on a model was not met, e.g. a missing layer.
    #[error("structural error: {0}")]
    Structure(String),

    /// Non-finite values appeared during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Checkpoint container could not be decoded.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Paired curves do not share their evaluation indices.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Structure(_) | Error::Contract(_) => 2,
            Error::Data(_) | Error::Checkpoint(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}
