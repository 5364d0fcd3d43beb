use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A hyperparameter combination is invalid (divisibility, ranges).
    #[error("config error: {0}")]
    Config(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// Corrupt or truncated weight bundle.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable kind used by the CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::UnknownArch(_) => "unknown_arch",
            Error::Parse(_) => "parse",
            Error::Format(_) => "format",
            Error::Unsupported(_) => "unsupported",
            Error::NonFinite { .. } => "non_finite",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::Image { .. } => "image",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use dim_err;
