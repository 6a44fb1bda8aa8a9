//! Crate-wide error type. The CLI maps `Config` to exit code 2 (usage/config
//! problems) and everything else to exit code 1 (runtime failures).

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or contradictory flags.
    #[error("config error: {0}")]
    Config(String),

    /// A value-level invariant was violated (shapes, finiteness, ranges).
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("tensor file error: {0}")]
    Tensor(#[from] nnet::tio::TioError),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown architecture '{id}'; registered: {known}")]
    UnknownArch { id: String, known: String },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a path to a raw i/o error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
