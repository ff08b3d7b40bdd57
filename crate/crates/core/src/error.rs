use std::path::PathBuf;

use thiserror::Error;

/// A malformed input row, reported with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {} malformed row(s), first: {}", rows.len(), rows.first().map(|r| r.to_string()).unwrap_or_default())]
    MalformedRows { path: String, rows: Vec<RowError> },

    #[error("user {user} has {count} interactions, at least 3 are required to split")]
    TooFewInteractions { user: String, count: usize },

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("model: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True when the failure was caused by the caller's inputs rather than a bug.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Diverged { .. } | Error::Model(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
