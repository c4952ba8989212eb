use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("numerical failure: {0}")]
    NonFinite(String),

    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
