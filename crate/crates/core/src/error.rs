use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// usage/config problems exit 1, data problems exit 2, numerical failures
/// exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed JSONL at line {line}: {message}")]
    JsonLine { line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
