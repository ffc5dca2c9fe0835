//! Clients for the two external services.
//!
//! The model server provides embeddings, cross-encoder attention and relevance
//! scores; the completion endpoint wraps any text-completion LLM. Both speak
//! JSON over HTTP:
//!
//! | path            | request                                             | response                                      |
//! |-----------------|-----------------------------------------------------|-----------------------------------------------|
//! | `/v1/embed`     | `{model, texts[]}`                                  | `{dim, vectors[][]}`                          |
//! | `/v1/attention` | `{model, comment, intent, code, statement_spans[]}` | `{K, N, matrix[][], code_token_statement[]}`  |
//! | `/v1/relevance` | `{model, comment, intent, code}`                    | `{score}`                                     |
//! | `/v1/complete`  | `{model, prompt, temperature, max_tokens}`          | `{text}`                                      |
//!
//! Requests are retried with exponential backoff on transport failures and
//! 5xx responses, and each endpoint caps its in-flight requests.

mod cache;
pub(crate) mod client;
mod limiter;
mod repeat;
mod transport;
pub mod wire;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{content_key, ContentCache};
pub use client::{CompletionClient, CompletionRequest, ModelServerClient, ServiceClient};
pub use limiter::{Limiter, Permit};
pub use repeat::{run_repeated, Attempt, AttemptOutcome, RepeatOutcome};
pub use transport::{HttpTransport, Transport, TransportError};

pub const ENV_MODEL_SERVER_URL: &str = "COMMENTGEN_MODEL_SERVER_URL";
pub const ENV_LLM_URL: &str = "COMMENTGEN_LLM_URL";
pub const ENV_LLM_API_KEY: &str = "COMMENTGEN_LLM_API_KEY";
pub const ENV_MODEL_SERVER_API_KEY: &str = "COMMENTGEN_MODEL_SERVER_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{endpoint} unreachable after {attempts} attempt(s): {message}")]
    Unreachable {
        endpoint: String,
        attempts: usize,
        message: String,
    },
    #[error("{endpoint} returned HTTP {code}: {excerpt}")]
    Status {
        endpoint: String,
        code: u16,
        excerpt: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl GatewayError {
    /// True when the service could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, GatewayError::Unreachable { .. })
    }
}

/// Anything that turns texts into embedding vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f64>>, GatewayError>;
}

/// Connection settings for one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub base_url: String,
    #[serde(rename = "timeout_ms", with = "millis")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_concurrency: usize,
    /// First backoff delay; doubles after every failed attempt.
    #[serde(rename = "backoff_ms", with = "millis")]
    pub backoff: Duration,
}

impl ServiceEndpoint {
    pub const MAX_RETRIES: u32 = 5;

    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_concurrency: 8,
            backoff: Duration::from_millis(250),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_retries > Self::MAX_RETRIES {
            return Err(GatewayError::InvalidArgument(format!(
                "max_retries {} exceeds {}",
                self.max_retries,
                Self::MAX_RETRIES
            )));
        }
        if self.max_concurrency == 0 {
            return Err(GatewayError::InvalidArgument("max_concurrency must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(GatewayError::InvalidArgument(format!(
                "bad base url `{}`",
                self.base_url
            )));
        }
        Ok(())
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
