use std::path::PathBuf;

use mlr_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlrError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (instances {instances:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        instances: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, MlrError>;

impl MlrError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Self::Format { what, msg: msg.into() }
    }
}
