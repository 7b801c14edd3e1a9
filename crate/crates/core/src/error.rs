use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("image decode error for sample {sample_id}: {message}")]
    ImageDecode { sample_id: String, message: String },

    #[error("malformed manifest record at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("shape mismatch{}: expected {expected}, got {actual}", context.as_ref().map(|c| format!(" for {c}")).unwrap_or_default())]
    ShapeMismatch {
        context: Option<String>,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("attribute error for sample {sample_id}: {message}")]
    Attribute { sample_id: String, message: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("backend lacks capability `{0}`")]
    MissingCapability(&'static str),

    #[error("backend timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("backend is not deterministic: {0}")]
    Nondeterministic(String),

    #[error("sweep interrupted after {completed} completed trials (checkpoint kept): {source}")]
    SweepInterrupted {
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: Option<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
