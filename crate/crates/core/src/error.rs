use std::io;

use fedpaw_tensor::TensorError;
use thiserror::Error;

use crate::ClientId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite values after `{layer}`")]
    Numeric { layer: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("client {client} diverged at batch {batch}")]
    Diverged { client: ClientId, batch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} already exists; pass --force to overwrite")]
    Exists(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
