use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    /// Connection refused, DNS failure, timeout, reset.
    #[error("transport failure: {0}")]
    Io(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("undecodable response: {0}")]
    Decode(String),
}

/// Posts a JSON body to `path` and returns the decoded JSON reply.
pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError>;

    /// Human-readable name used in error messages.
    fn describe(&self) -> String;
}

pub struct HttpTransport {
    base_url: String,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            api_key,
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let url = format!("{}{}", self.base_url, path);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| TransportError::Decode(e.to_string())),
            Err(ureq::Error::Status(code, resp)) => Err(TransportError::Status {
                code,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(TransportError::Io(t.to_string())),
        }
    }

    fn describe(&self) -> String {
        self.base_url.clone()
    }
}
