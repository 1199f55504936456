use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Nn(#[from] ptnn::NnError),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("feed error: {0}")]
    Feed(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure while reading one of the input series files.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: line {line}: parse error: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{}: line {line}: invalid {field}: {msg}", path.display())]
    Invariant {
        path: PathBuf,
        line: u64,
        field: String,
        msg: String,
    },

    #[error("{}: line {line}: timestamp {ts} not after previous {prev}", path.display())]
    NonMonotone { path: PathBuf, line: u64, ts: i64, prev: i64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LoadError {
    pub fn line(&self) -> Option<u64> {
        match self {
            LoadError::Parse { line, .. } | LoadError::Invariant { line, .. } | LoadError::NonMonotone { line, .. } => {
                Some(*line)
            }
            LoadError::Io { .. } => None,
        }
    }
}
