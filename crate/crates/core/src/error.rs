use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("insufficient content to assemble a report for dialog {0}")]
    InsufficientContent(String),

    #[error("checkpoint not found: {}", .0.display())]
    CheckpointNotFound(PathBuf),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("missing utterance vector for {0}")]
    MissingVector(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{}: {source}", path.display())]
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

    /// Stable, machine-readable name of the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse_error",
            Error::Validation(_) => "validation_error",
            Error::Shape(_) => "shape_error",
            Error::Config(_) => "config_error",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::InsufficientContent(_) => "insufficient_content",
            Error::CheckpointNotFound(_) => "checkpoint_not_found",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::MissingVector(_) => "missing_vector",
            Error::Tensor(_) => "tensor_error",
            Error::Json(_) => "json_error",
            Error::Io { .. } => "io_error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Json(_) => 3,
            Error::Validation(_) | Error::Shape(_) => 4,
            Error::Config(_) => 5,
            Error::CheckpointNotFound(_) => 6,
            Error::SchemaMismatch(_) => 7,
            Error::EmptyDataset(_) | Error::InsufficientContent(_) | Error::MissingVector(_) => 8,
            Error::Io { .. } => 9,
            Error::Tensor(_) => 10,
        }
    }
}
