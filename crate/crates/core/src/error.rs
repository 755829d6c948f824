use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeepError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite gradient in parameter `{param}`")]
    Numeric { param: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("id {id} out of range for table `{table}` (vocab {vocab})")]
    IdOutOfRange { table: String, id: u64, vocab: usize },
    #[error("label {0} is not binary")]
    InvalidLabel(f32),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("checkpoint manifest mismatch: missing {missing:?}, extra {extra:?}")]
    Manifest {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("value overflow: {0}")]
    Overflow(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = KeepError> = std::result::Result<T, E>;

impl KeepError {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        KeepError::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
