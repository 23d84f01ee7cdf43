use std::path::PathBuf;

use thiserror::Error;

use crate::graph::Triplet;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Reference(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Validation(String),

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("provenance check failed: {0}")]
    Provenance(String),

    #[error("negative sampling failed for edge {edge:?}: {msg}")]
    Sampling { edge: Triplet, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("synchronization error: {0}")]
    Sync(String),

    #[error("worker {worker} failed at batch {batch}: {msg}")]
    Worker {
        worker: usize,
        batch: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures rooted in non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
            || matches!(self, Error::Worker { msg, .. } if msg.starts_with("numeric failure"))
    }
}
