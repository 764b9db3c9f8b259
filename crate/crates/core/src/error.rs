use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no {0}")]
    EmptyGraph(&'static str),
    #[error("interaction ({user}, {item}) out of range for {num_users} users x {num_items} items")]
    EdgeOutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },
    #[error("encoding error for entity {entity}, field {field}: {reason}")]
    Encoding {
        entity: String,
        field: String,
        reason: String,
    },
    #[error("attribute dimension {dim} has no observed entity")]
    NoObservedValues { dim: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("negative sampling failed: user {0} has interacted with every item")]
    Sampling(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
