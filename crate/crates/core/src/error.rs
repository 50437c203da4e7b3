use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite pixel at index {0}")]
    NonFinite(usize),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("empty occupancy")]
    EmptyOccupancy,
    #[error("time consistency undefined for fewer than 2 sub-frames")]
    TimeConsistencyUndefined,
    #[error("no object: every sub-frame mask is empty")]
    NoObject,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {message}")]
    Dataset { path: PathBuf, message: String },
    #[error("{path}: {reason}")]
    Io {
        path: PathBuf,
        reason: std::io::Error,
    },
    #[error("{path}: png decode: {reason}")]
    PngDecode {
        path: PathBuf,
        reason: png::DecodingError,
    },
    #[error("{path}: png encode: {reason}")]
    PngEncode {
        path: PathBuf,
        reason: png::EncodingError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            reason: source,
        }
    }

    pub(crate) fn dataset(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            message: message.into(),
        }
    }
}
