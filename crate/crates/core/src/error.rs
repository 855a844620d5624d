use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, hyperparameters or other caller-supplied settings are invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data could not be parsed or is unusable.
    #[error("data error: {0}")]
    Data(String),

    /// A loss, gradient or parameter became non-finite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A checkpoint failed its structural or checksum validation.
    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
