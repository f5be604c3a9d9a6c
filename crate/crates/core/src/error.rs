use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or dataset shapes do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// An invalid model, training, or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The data cannot support the requested operation.
    #[error("data error: {0}")]
    Data(String),

    /// A malformed archive or checkpoint file.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// An operation produced NaN or infinity from finite inputs.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Training failed, typically by divergence.
    #[error("training error: {message}")]
    Training {
        message: String,
        log: Option<Box<crate::training::RunLog>>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
