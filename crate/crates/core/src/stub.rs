//! Deterministic stand-ins for the model server and the completion LLM.
//!
//! Every stub speaks the same JSON wire contract as the real services, either
//! in-process through [`StubTransport`] or over loopback HTTP through
//! [`StubServer`].

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::codetext::{lex_subtokens, subtokenize};
use crate::gateway::wire::*;
use crate::gateway::{Transport, TransportError};
use crate::promptgen::{normalize_code, render_response};
use crate::retrieval::token_similarity;

#[derive(Debug, Clone, PartialEq)]
pub struct StubReply {
    pub status: u16,
    pub body: Value,
}

impl StubReply {
    pub fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    pub fn error(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn from_result<T: serde::Serialize>(r: Result<T, StubReply>) -> Self {
        match r {
            Ok(v) => StubReply::ok(serde_json::to_value(v).expect("serializable reply")),
            Err(e) => e,
        }
    }
}

/// Handles one JSON request.
pub trait StubService: Send + Sync {
    fn handle(&self, path: &str, body: &Value) -> StubReply;
}

fn decode<T: DeserializeOwned>(body: &Value) -> Result<T, StubReply> {
    serde_json::from_value(body.clone()).map_err(|e| StubReply::error(400, e.to_string()))
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Embeddings, attention and relevance computed from sub-token overlap.
#[derive(Debug, Clone)]
pub struct StubModelServer {
    pub dim: usize,
}

impl Default for StubModelServer {
    fn default() -> Self {
        Self { dim: 32 }
    }
}

impl StubModelServer {
    /// Hashed bag of sub-tokens plus a constant component, so no vector is zero.
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[0] = 1.0;
        for token in subtokenize(text).iter() {
            let h = fnv1a(token);
            let slot = 1 + (h % (self.dim as u64 - 1)) as usize;
            v[slot] += if (h >> 63) == 0 { 1.0 } else { -1.0 };
        }
        v
    }

    fn embed(&self, req: EmbedRequest) -> Result<EmbedResponse, StubReply> {
        if req.texts.is_empty() {
            return Err(StubReply::error(400, "empty batch"));
        }
        Ok(EmbedResponse {
            dim: self.dim,
            vectors: req.texts.iter().map(|t| self.embed_text(t)).collect(),
        })
    }

    /// Row-softmax of logits that favour identical tokens.
    fn attention(&self, req: AttentionRequest) -> Result<AttentionResponse, StubReply> {
        let comment: Vec<String> = lex_subtokens(&req.comment).into_iter().map(|t| t.text).collect();
        let code = lex_subtokens(&req.code);
        let mut code_token_statement = Vec::with_capacity(code.len());
        for token in &code {
            let owner = req
                .statement_spans
                .iter()
                .find(|s| s.start <= token.span.start && token.span.start < s.end)
                .ok_or_else(|| {
                    StubReply::error(
                        422,
                        format!(
                            "code token `{}` at byte {} is outside every statement",
                            token.text, token.span.start
                        ),
                    )
                })?;
            code_token_statement.push(owner.index);
        }

        let mut sequence: Vec<&str> = comment.iter().map(String::as_str).collect();
        sequence.push(req.intent.as_str());
        sequence.extend(code.iter().map(|t| t.text.as_str()));
        let side = sequence.len();
        let matrix = (0..side)
            .map(|r| {
                let logits: Vec<f64> = (0..side)
                    .map(|c| if sequence[r] == sequence[c] { 3.0 } else { 0.0 } + (((r * 31 + c * 17) % 7) as f64) * 0.01)
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                logits.iter().map(|l| l.exp() / z).collect()
            })
            .collect();
        Ok(AttentionResponse {
            comment_len: comment.len(),
            code_len: code.len(),
            matrix,
            code_token_statement,
        })
    }
}

impl StubService for StubModelServer {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        match path {
            "/v1/embed" => StubReply::from_result(decode(body).and_then(|r| self.embed(r))),
            "/v1/attention" => StubReply::from_result(decode(body).and_then(|r| self.attention(r))),
            "/v1/relevance" => StubReply::from_result(decode::<RelevanceRequest>(body).map(|r| RelevanceResponse {
                score: token_similarity(&subtokenize(&r.comment), &subtokenize(&r.code)),
            })),
            other => StubReply::error(404, format!("no route {other}")),
        }
    }
}

const INPUT_HEADER: &str = "# For the test code:\n";
const FORMAT_HEADER: &str = "\n\n# Please imitate";

/// Answers every prompt with the ground-truth comment of its test code.
#[derive(Debug, Clone, Default)]
pub struct EchoLlm {
    comments: HashMap<String, String>,
}

impl EchoLlm {
    pub fn new<I, C, M>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (C, M)>,
        C: AsRef<str>,
        M: Into<String>,
    {
        Self {
            comments: pairs
                .into_iter()
                .map(|(code, comment)| (normalize_code(code.as_ref()), comment.into()))
                .collect(),
        }
    }

    /// The test code embedded in a rendered prompt.
    pub fn target_code(prompt: &str) -> Option<&str> {
        let start = prompt.rfind(INPUT_HEADER)? + INPUT_HEADER.len();
        let end = prompt[start..].find(FORMAT_HEADER).map_or(prompt.len(), |i| start + i);
        Some(&prompt[start..end])
    }

    pub fn respond(&self, prompt: &str) -> String {
        match Self::target_code(prompt).and_then(|code| self.comments.get(code).map(|c| (code, c))) {
            Some((code, comment)) => render_response(code.lines().next().unwrap_or("").trim(), comment),
            None => "I cannot find a comment for this code.".to_string(),
        }
    }
}

impl StubService for EchoLlm {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        if path != "/v1/complete" {
            return StubReply::error(404, format!("no route {path}"));
        }
        StubReply::from_result(decode::<CompleteRequest>(body).map(|r| CompleteResponse {
            text: self.respond(&r.prompt),
        }))
    }
}

/// Returns the same completion text for every prompt.
#[derive(Debug, Clone)]
pub struct CannedLlm(pub String);

impl StubService for CannedLlm {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        if path != "/v1/complete" {
            return StubReply::error(404, format!("no route {path}"));
        }
        StubReply::from_result(decode::<CompleteRequest>(body).map(|_| CompleteResponse { text: self.0.clone() }))
    }
}

/// Dispatches by exact path; unknown paths get 404.
#[derive(Default, Clone)]
pub struct Router {
    routes: BTreeMap<String, Arc<dyn StubService>>,
}

impl Router {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(mut self, path: &str, service: Arc<dyn StubService>) -> Self {
        self.routes.insert(path.to_string(), service);
        self
    }

    /// All four endpoints: model-server paths to `model`, completions to `llm`.
    pub fn services(model: Arc<dyn StubService>, llm: Arc<dyn StubService>) -> Self {
        Self::new()
            .route("/v1/embed", model.clone())
            .route("/v1/attention", model.clone())
            .route("/v1/relevance", model)
            .route("/v1/complete", llm)
    }
}

impl StubService for Router {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        match self.routes.get(path) {
            Some(s) => s.handle(path, body),
            None => StubReply::error(404, format!("no route {path}")),
        }
    }
}

/// Fails the first `failures` calls with `status`, then delegates.
pub struct FailFirst<S> {
    pub inner: S,
    pub failures: usize,
    pub status: u16,
    seen: AtomicUsize,
}

impl<S> FailFirst<S> {
    pub fn new(inner: S, failures: usize, status: u16) -> Self {
        Self {
            inner,
            failures,
            status,
            seen: AtomicUsize::new(0),
        }
    }
}

impl<S: StubService> StubService for FailFirst<S> {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        if self.seen.fetch_add(1, Ordering::SeqCst) < self.failures {
            return StubReply::error(self.status, "injected failure");
        }
        self.inner.handle(path, body)
    }
}

/// Sleeps before delegating.
pub struct Slow<S> {
    pub inner: S,
    pub delay: Duration,
}

impl<S: StubService> StubService for Slow<S> {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        std::thread::sleep(self.delay);
        self.inner.handle(path, body)
    }
}

#[derive(Debug, Default)]
struct Counters {
    calls: BTreeMap<String, usize>,
    in_flight: usize,
    peak: usize,
}

/// Counts calls and peak concurrency per wrapped service.
pub struct Instrumented<S> {
    pub inner: S,
    counters: Mutex<Counters>,
}

impl<S> Instrumented<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            counters: Mutex::new(Counters::default()),
        }
    }

    pub fn calls(&self, path: &str) -> usize {
        self.counters.lock().unwrap().calls.get(path).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.counters.lock().unwrap().calls.values().sum()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.counters.lock().unwrap().peak
    }
}

impl<S: StubService> StubService for Instrumented<S> {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        {
            let mut c = self.counters.lock().unwrap();
            *c.calls.entry(path.to_string()).or_insert(0) += 1;
            c.in_flight += 1;
            c.peak = c.peak.max(c.in_flight);
        }
        let reply = self.inner.handle(path, body);
        self.counters.lock().unwrap().in_flight -= 1;
        reply
    }
}

impl<S: StubService + ?Sized> StubService for Arc<S> {
    fn handle(&self, path: &str, body: &Value) -> StubReply {
        (**self).handle(path, body)
    }
}

/// Calls a stub directly, without sockets.
pub struct StubTransport {
    service: Arc<dyn StubService>,
}

impl StubTransport {
    pub fn new(service: Arc<dyn StubService>) -> Self {
        Self { service }
    }
}

impl Transport for StubTransport {
    fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let reply = self.service.handle(path, body);
        if (200..300).contains(&reply.status) {
            Ok(reply.body)
        } else {
            Err(TransportError::Status {
                code: reply.status,
                body: reply.body.to_string(),
            })
        }
    }

    fn describe(&self) -> String {
        "stub://in-process".into()
    }
}

/// A stub served over loopback HTTP, one thread per request. Stops on drop.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(service: Arc<dyn StubService>) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", service)
    }

    pub fn bind(addr: &str, service: Arc<dyn StubService>) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let acceptor = {
            let server = server.clone();
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    let service = service.clone();
                    std::thread::spawn(move || serve_one(request, service.as_ref()));
                }
            })
        };
        Ok(Self {
            server,
            addr,
            acceptor: Some(acceptor),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks the calling thread until the process is killed.
    pub fn wait(mut self) {
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(mut request: tiny_http::Request, service: &dyn StubService) {
    let mut raw = String::new();
    let reply = match request.as_reader().read_to_string(&mut raw) {
        Ok(_) => match serde_json::from_str::<Value>(&raw) {
            Ok(body) => service.handle(request.url(), &body),
            Err(e) => StubReply::error(400, format!("invalid JSON: {e}")),
        },
        Err(e) => StubReply::error(400, e.to_string()),
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(reply.body.to_string())
        .with_status_code(reply.status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        log::debug!("stub client went away: {e}");
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }
}
