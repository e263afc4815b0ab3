use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("rule error: {0}")]
    Rule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph format error: {0}")]
    GraphFormat(String),

    #[error("meta-tool file error: {0}")]
    MetaToolFormat(String),

    #[error("analyst failed: {0}")]
    Analyst(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn schema(line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the input data rather than by the caller.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
