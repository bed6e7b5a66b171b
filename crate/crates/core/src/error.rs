use std::path::PathBuf;

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot sample: both replay buffers are empty")]
    EmptyBuffers,

    #[error("invalid transition: {0}")]
    InvalidTransition(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint fingerprint mismatch: checkpoint has `{found}`, config expects `{expected}`")]
    Fingerprint { expected: String, found: String },

    #[error("environment: {0}")]
    Env(String),

    #[error("training at epoch {epoch}: {source}")]
    Epoch {
        epoch: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset generation: {0}")]
    Generation(String),

    #[error("diagnostics: {0}")]
    Diagnostics(String),
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Nn(_) | Error::NonFinite { .. } => "numeric",
            Error::Dimension { .. } => "dimension",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::EmptyBuffers | Error::InvalidTransition(_) => "replay",
            Error::MalformedHeader { .. } | Error::Truncated { .. } => "format",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "not-found"
            }
            Error::Io { .. } => "io",
            Error::Fingerprint { .. } => "fingerprint",
            Error::Env(_) => "env",
            Error::Epoch { source, .. } => source.category(),
            Error::Generation(_) => "generation",
            Error::Diagnostics(_) => "diagnostics",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
