use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The experimental design cannot support the requested test.
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A binary or text file did not parse. `offset` is a byte offset for
    /// binary containers and a line number for text formats.
    #[error("format error at offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
