use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the benchmark pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error in {source_name} (row {row}): {message}")]
    Ingest {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("inconsistent frame files: {first} has {first_width} columns but {second} has {second_width}")]
    InconsistentWidth {
        first: PathBuf,
        first_width: usize,
        second: PathBuf,
        second_width: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample {sample_id} is unusable: {reason}")]
    UnusableSample { sample_id: String, reason: String },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("width mismatch: expected {expected} columns, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("unknown backend {name:?}; registered backends: {}", available.join(", "))]
    UnknownBackend { name: String, available: Vec<String> },

    #[error("backend {0:?} is already registered")]
    DuplicateBackend(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("classifier has not been fitted")]
    NotFitted,

    #[error("fine-tuning diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("fold {fold} failed: {cause}")]
    FoldFailed { fold: usize, cause: Box<Error> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown run id {0:?}")]
    UnknownRun(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

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
