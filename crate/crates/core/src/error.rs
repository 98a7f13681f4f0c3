use std::path::PathBuf;

use pathe_tensor::checkpoint::CheckpointError;
use pathe_tensor::{OptimError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite values during training.
    pub fn is_numeric(&self) -> bool {
        matches!(self, CoreError::Numeric(_))
    }
}

impl From<OptimError> for CoreError {
    fn from(e: OptimError) -> Self {
        CoreError::Numeric(e.to_string())
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
