use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("ill-conditioned: {0}")]
    Conditioning(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("empty evaluation domain")]
    EmptyDomain,
    #[error("empty tract segmentation")]
    EmptyTract,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Spec(String),
    #[error("dataset error at {path}: {message}")]
    Dataset { path: PathBuf, message: String },
    #[error("subject {subject}: {source}")]
    Subject {
        subject: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the subject it was computed for.
    pub fn for_subject(self, subject: impl Into<String>) -> Self {
        Error::Subject {
            subject: subject.into(),
            source: Box::new(self),
        }
    }
}
