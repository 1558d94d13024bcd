use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants fall into three buckets that the CLI maps to exit codes:
/// usage/configuration problems, bad input data, and everything else.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("record rejected: {0}")]
    Record(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("xml error: {0}")]
    Xml(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code for this error: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Record(_) | Error::Data(_) | Error::Json(_) | Error::Csv(_) | Error::Xml(_) => 2,
            Error::Io(_) | Error::Internal(_) => 3,
        }
    }

    /// Short machine-parseable category used as the stderr prefix.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            2 => "data",
            _ => "internal",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
