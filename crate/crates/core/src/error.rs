use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Lengths or shapes that do not satisfy an operation's size contract.
    #[error("size error: {0}")]
    Size(String),

    /// A scalar argument outside its valid domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Inconsistent or unknown configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed checkpoint, dataset or config file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error at {path}: {source}")]
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
}
