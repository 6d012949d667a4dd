use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: schema error: {message}")]
    Schema { file: String, message: String },

    #[error("{file}:{line}: {message}")]
    Row {
        file: String,
        line: u64,
        message: String,
    },

    #[error("duplicate commit hash {0}")]
    DuplicateCommit(String),

    #[error("history record {record}: {message}")]
    DiffParse { record: usize, message: String },

    #[error("history graph: {0}")]
    Graph(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("diff replay inconsistency: {0}")]
    Corruption(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("shape mismatch: network expects (., {expected_h}, {expected_m}), got (., {got_h}, {got_m})")]
    Shape {
        expected_h: usize,
        expected_m: usize,
        got_h: usize,
        got_m: usize,
    },

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stale artifact: {0}")]
    StaleArtifact(String),

    #[error("bad artifact {path}: {message}")]
    Artifact { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
