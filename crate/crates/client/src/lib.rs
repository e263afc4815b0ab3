//! Clients for the two HTTP services tracefold talks to: its own API server
//! ([`TracefoldClient`]) and an external chat-completion analyst
//! ([`HttpAnalyst`]).

mod analyst;
mod service;

pub use analyst::{AnalystSettings, HttpAnalyst};
pub use service::{ApplyResult, ExtractParams, Preview, SessionCreated, SessionInfo, StatsDelta, TracefoldClient};

use tracefold_core::normalize::Diagnostic;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The server answered with a non-success status.
    #[error("server returned {status}: {message}")]
    Status {
        status: u16,
        message: String,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response body: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;
