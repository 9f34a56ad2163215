use std::path::PathBuf;

use thiserror::Error;

use crate::codec::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("box lies entirely behind the camera")]
    BehindCamera,

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown dataset adapter `{0}`")]
    UnknownAdapter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable kind, used in diagnostics files.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::BehindCamera => "behind-camera",
            Error::Parse(_) => "parse",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::UnknownAdapter(_) => "unknown-adapter",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }
}
