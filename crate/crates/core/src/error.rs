use std::io;
use std::path::{Path, PathBuf};

use spdn_tensor::checkpoint::CheckpointError;
use spdn_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpdnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("range error: step {step} is outside [0, {t_max})")]
    Range { step: usize, t_max: usize },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = SpdnError> = std::result::Result<T, E>;

impl SpdnError {
    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> SpdnError + '_ {
        move |source| SpdnError::Io { path: path.to_path_buf(), source }
    }
}
