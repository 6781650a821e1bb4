use thiserror::Error;

use crate::spectral::Peak;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Lattice or spot-width estimation could not produce a usable answer.
    /// Carries whatever peaks were detected so callers can report them.
    #[error("estimation failed: {reason}")]
    Estimation { reason: String, peaks: Vec<Peak> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn estimation(reason: impl Into<String>, peaks: Vec<Peak>) -> Self {
        Error::Estimation { reason: reason.into(), peaks }
    }
}

impl From<::image::ImageError> for Error {
    fn from(e: ::image::ImageError) -> Self {
        match e {
            ::image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
