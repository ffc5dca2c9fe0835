use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::cache::{content_key, ContentCache};
use super::limiter::Limiter;
use super::transport::{HttpTransport, Transport, TransportError};
use super::wire::*;
use super::{Embedder, GatewayError, ServiceEndpoint};
use crate::codetext::StatementList;
use crate::corpus::IntentCategory;
use crate::knowledge::{AttentionBundle, Matrix};

const EXCERPT_LEN: usize = 200;
const EMBED_BATCH: usize = 64;

fn excerpt(body: &str) -> String {
    let mut out: String = body.chars().take(EXCERPT_LEN).collect();
    if body.chars().count() > EXCERPT_LEN {
        out.push('…');
    }
    out
}

/// Retrying, concurrency-limited JSON caller for one endpoint.
pub struct ServiceClient {
    transport: Arc<dyn Transport>,
    max_retries: u32,
    backoff: Duration,
    limiter: Limiter,
    requests: AtomicU64,
}

impl ServiceClient {
    pub fn new(transport: Arc<dyn Transport>, endpoint: &ServiceEndpoint) -> Self {
        Self {
            transport,
            max_retries: endpoint.max_retries.min(ServiceEndpoint::MAX_RETRIES),
            backoff: endpoint.backoff,
            limiter: Limiter::new(endpoint.max_concurrency),
            requests: AtomicU64::new(0),
        }
    }

    pub fn http(endpoint: &ServiceEndpoint, api_key: Option<String>) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        let transport = HttpTransport::new(&endpoint.base_url, endpoint.timeout, api_key);
        Ok(Self::new(Arc::new(transport), endpoint))
    }

    /// Number of HTTP attempts made so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn call<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp, GatewayError> {
        let body = serde_json::to_value(req).map_err(|e| GatewayError::InvalidArgument(e.to_string()))?;
        let endpoint = format!("{}{}", self.transport.describe(), path);
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                self.transport.post(path, &body)
            };
            log::debug!("POST {endpoint} attempt {attempt} took {:?}", started.elapsed());

            let retryable = match &result {
                Ok(_) => false,
                Err(TransportError::Io(_)) => true,
                Err(TransportError::Status { code, .. }) => *code >= 500,
                Err(TransportError::Decode(_)) => false,
            };
            if retryable && attempt <= self.max_retries as usize {
                log::warn!("POST {endpoint} failed (attempt {attempt}), retrying in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
                continue;
            }
            return match result {
                Ok(value) => {
                    serde_json::from_value(value).map_err(|e| GatewayError::Protocol(format!("{endpoint}: {e}")))
                }
                Err(TransportError::Io(message)) => Err(GatewayError::Unreachable {
                    endpoint,
                    attempts: attempt,
                    message,
                }),
                Err(TransportError::Status { code, body }) => Err(GatewayError::Status {
                    endpoint,
                    code,
                    excerpt: excerpt(&body),
                }),
                Err(TransportError::Decode(e)) => Err(GatewayError::Protocol(format!("{endpoint}: {e}"))),
            };
        }
    }
}

/// Client for `/v1/embed`, `/v1/attention` and `/v1/relevance`.
pub struct ModelServerClient {
    service: ServiceClient,
    embeddings: ContentCache<Vec<f64>>,
    attention: ContentCache<AttentionBundle>,
}

impl ModelServerClient {
    pub fn new(service: ServiceClient) -> Self {
        Self::with_caches(service, ContentCache::in_memory(), ContentCache::in_memory())
    }

    pub fn with_caches(
        service: ServiceClient,
        embeddings: ContentCache<Vec<f64>>,
        attention: ContentCache<AttentionBundle>,
    ) -> Self {
        Self {
            service,
            embeddings,
            attention,
        }
    }

    pub fn service(&self) -> &ServiceClient {
        &self.service
    }

    /// One vector per text, in order. Cached per (model, text).
    pub fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidArgument("empty embedding batch".into()));
        }
        let keys: Vec<String> = texts.iter().map(|t| content_key(&["embed", model, t])).collect();
        let mut missing: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if self.embeddings.get(key).is_none() && !missing.iter().any(|&j| keys[j] == *key) {
                missing.push(i);
            }
        }

        for chunk in missing.chunks(EMBED_BATCH) {
            let req = EmbedRequest {
                model: model.to_string(),
                texts: chunk.iter().map(|&i| texts[i].clone()).collect(),
            };
            let resp: EmbedResponse = self.service.call("/v1/embed", &req)?;
            if resp.vectors.len() != chunk.len() {
                return Err(GatewayError::Protocol(format!(
                    "asked for {} embeddings, got {}",
                    chunk.len(),
                    resp.vectors.len()
                )));
            }
            if resp.dim == 0 || resp.vectors.iter().any(|v| v.len() != resp.dim) {
                return Err(GatewayError::Protocol(format!(
                    "embedding dimensions disagree with advertised dim {}",
                    resp.dim
                )));
            }
            for (&i, vector) in chunk.iter().zip(resp.vectors) {
                self.embeddings.insert(keys[i].clone(), vector);
            }
        }

        let out: Vec<Vec<f64>> = keys
            .iter()
            .map(|k| self.embeddings.get(k).expect("embedding cached above"))
            .collect();
        let dim = out[0].len();
        if out.iter().any(|v| v.len() != dim) {
            return Err(GatewayError::Protocol(
                "embedding dimensions disagree within batch".into(),
            ));
        }
        Ok(out)
    }

    /// Final-layer attention for `[comment, intent, code]`, aligned to `statements`.
    pub fn fetch_attention(
        &self,
        comment: &str,
        intent: IntentCategory,
        code: &str,
        statements: &StatementList,
        model: &str,
    ) -> Result<AttentionBundle, GatewayError> {
        let key = content_key(&["attention", model, intent.as_str(), comment, code]);
        if let Some(bundle) = self.attention.get(&key) {
            return Ok(bundle);
        }
        let req = AttentionRequest {
            model: model.to_string(),
            comment: comment.to_string(),
            intent: intent.as_str().to_string(),
            code: code.to_string(),
            statement_spans: statements
                .statements
                .iter()
                .map(|s| StatementSpan {
                    index: s.index,
                    start: s.span.start,
                    end: s.span.end,
                })
                .collect(),
        };
        let resp: AttentionResponse = self.service.call("/v1/attention", &req)?;
        let bundle = bundle_from_response(resp, statements.len())?;
        self.attention.insert(key, bundle.clone());
        Ok(bundle)
    }

    pub fn relevance(
        &self,
        comment: &str,
        intent: IntentCategory,
        code: &str,
        model: &str,
    ) -> Result<f64, GatewayError> {
        let req = RelevanceRequest {
            model: model.to_string(),
            comment: comment.to_string(),
            intent: intent.as_str().to_string(),
            code: code.to_string(),
        };
        let resp: RelevanceResponse = self.service.call("/v1/relevance", &req)?;
        Ok(resp.score)
    }
}

/// Validates an attention reply against the declared K, N and statement count.
pub(crate) fn bundle_from_response(
    resp: AttentionResponse,
    statement_count: usize,
) -> Result<AttentionBundle, GatewayError> {
    let side = resp.comment_len + 1 + resp.code_len;
    if resp.matrix.len() != side || resp.matrix.iter().any(|r| r.len() != side) {
        return Err(GatewayError::Protocol(format!(
            "attention matrix is not {side}x{side} for K={}, N={}",
            resp.comment_len, resp.code_len
        )));
    }
    if resp.code_token_statement.len() != resp.code_len {
        return Err(GatewayError::Protocol(format!(
            "alignment covers {} of {} code tokens",
            resp.code_token_statement.len(),
            resp.code_len
        )));
    }
    if let Some((token, stmt)) = resp
        .code_token_statement
        .iter()
        .enumerate()
        .find(|(_, &s)| s >= statement_count)
    {
        return Err(GatewayError::Protocol(format!(
            "code token {token} aligned to statement {stmt}, but only {statement_count} statements exist"
        )));
    }
    let bundle = AttentionBundle {
        matrix: Matrix::from_rows(&resp.matrix).expect("shape checked"),
        comment_len: resp.comment_len,
        code_len: resp.code_len,
        code_token_statement: resp.code_token_statement,
    };
    bundle.validate().map_err(|e| GatewayError::Protocol(e.to_string()))?;
    Ok(bundle)
}

impl Embedder for ModelServerClient {
    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f64>>, GatewayError> {
        ModelServerClient::embed(self, texts, model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
    pub seed_hint: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.5,
            max_tokens: 256,
            model: model.into(),
            seed_hint: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidArgument("empty prompt".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidArgument(format!(
                "temperature {} < 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidArgument("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Client for `/v1/complete`.
pub struct CompletionClient {
    service: ServiceClient,
}

impl CompletionClient {
    pub fn new(service: ServiceClient) -> Self {
        Self { service }
    }

    pub fn service(&self) -> &ServiceClient {
        &self.service
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let started = Instant::now();
        let wire = CompleteRequest {
            model: req.model.clone(),
            prompt: req.prompt.clone(),
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            seed: req.seed_hint,
        };
        let resp: CompleteResponse = self.service.call("/v1/complete", &wire)?;
        log::info!(
            "completion model={} prompt_chars={} response_chars={} latency={:?}",
            req.model,
            req.prompt.len(),
            resp.text.len(),
            started.elapsed()
        );
        Ok(resp.text)
    }
}
