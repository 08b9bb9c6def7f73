//! Chat-completion client with bounded concurrency, full-jitter retry and
//! a request-fingerprint cassette for offline, bit-reproducible runs.
//!
//! The transport is pluggable: [`HttpTransport`] speaks the common
//! chat-completions JSON shape over HTTP; [`FnTransport`] wraps a closure
//! for scripted teachers in tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;
pub const ROLLOUT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_GROUP_SIZE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no cassette entry for request fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("cancelled before the request was sent")]
    Cancelled,
}

impl LlmError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::RateLimited { .. } | LlmError::TransportError(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Message {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Message {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n: u32,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            messages,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: DEFAULT_MAX_TOKENS,
            n: 1,
        }
    }

    pub fn user(prompt: impl Into<String>) -> ChatRequest {
        ChatRequest::new(vec![Message::user(prompt)])
    }

    pub fn with_sampling(mut self, s: &SamplingOverrides) -> ChatRequest {
        if let Some(t) = s.temperature {
            self.temperature = t;
        }
        if let Some(p) = s.top_p {
            self.top_p = p;
        }
        if let Some(m) = s.max_tokens {
            self.max_tokens = m;
        }
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidRequest(m.to_string()));
        if self.messages.is_empty() {
            return bad("messages must not be empty");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.n == 0 {
            return bad("n must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingOverrides {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a transport returns for one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub completions: Vec<String>,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatResponse {
    pub completions: Vec<String>,
    pub usage: Usage,
    pub latency: Duration,
    /// True when served from the cassette.
    pub replayed: bool,
}

/// Sends one request to a model.
pub trait Transport: Send + Sync {
    fn send(&self, model: &str, request: &ChatRequest) -> Result<WireResponse, LlmError>;
}

/// A transport backed by a closure.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&str, &ChatRequest) -> Result<WireResponse, LlmError> + Send + Sync,
{
    fn send(&self, model: &str, request: &ChatRequest) -> Result<WireResponse, LlmError> {
        (self.0)(model, request)
    }
}

/// POSTs the chat-completions JSON body and reads `choices[].message.content`.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> HttpTransport {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
            url: url.into(),
            api_key,
        }
    }
}

/// Parses a chat-completions response body.
pub fn parse_wire_response(body: &Value) -> Result<WireResponse, LlmError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| LlmError::MalformedResponse("missing choices array".into()))?;
    let completions = choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| LlmError::MalformedResponse("choice without message.content".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let usage = Usage {
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(WireResponse { completions, usage })
}

impl Transport for HttpTransport {
    fn send(&self, model: &str, request: &ChatRequest) -> Result<WireResponse, LlmError> {
        let body = json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "n": request.n,
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| LlmError::TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::TransportError(e.to_string()))?;
        match status {
            200..=299 => {
                let v: Value = serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                parse_wire_response(&v)
            }
            401 | 403 => Err(LlmError::AuthFailure(format!("http {status}"))),
            429 => Err(LlmError::RateLimited { retry_after }),
            500..=599 | 408 => Err(LlmError::TransportError(format!("http {status}"))),
            _ => Err(LlmError::MalformedResponse(format!("http {status}: {}", text.chars().take(200).collect::<String>()))),
        }
    }
}

/// Full-jitter exponential backoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_secs: f64,
    pub cap_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_secs: 1.0,
            cap_secs: 60.0,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the sleep before retry number `attempt` (0-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let exp = self.base_secs * 2f64.powi(attempt.min(62) as i32);
        Duration::from_secs_f64(exp.min(self.cap_secs).max(0.0))
    }

    pub fn delay<R: Rng + ?Sized>(&self, attempt: u32, rng: &mut R) -> Duration {
        let c = self.ceiling(attempt).as_secs_f64();
        if c <= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(rng.random_range(0.0..=c))
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Semaphore {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock();
        while *p == 0 {
            self.cv.wait(&mut p);
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    /// Call the transport and store every response.
    Record,
    /// Serve stored responses only; never touch the transport.
    Replay,
    #[default]
    Passthrough,
}

impl std::str::FromStr for CassetteMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(CassetteMode::Record),
            "replay" => Ok(CassetteMode::Replay),
            "passthrough" => Ok(CassetteMode::Passthrough),
            _ => Err(format!("unknown cassette mode {s:?}")),
        }
    }
}

/// One stored exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub model: String,
    pub slot: u32,
    pub request: ChatRequest,
    pub response: WireResponse,
}

/// Request-fingerprint to response store, persisted as JSON lines sorted by
/// fingerprint.
pub struct Cassette {
    path: Option<PathBuf>,
    mode: CassetteMode,
    entries: Mutex<BTreeMap<String, CassetteEntry>>,
}

/// Stable hash of everything that determines a response.
pub fn request_fingerprint(model: &str, request: &ChatRequest, slot: u32) -> String {
    let canonical = json!({
        "model": model,
        "messages": request.messages,
        "temperature": request.temperature,
        "top_p": request.top_p,
        "max_tokens": request.max_tokens,
        "n": request.n,
        "slot": slot,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Cassette {
    pub fn in_memory(mode: CassetteMode) -> Cassette {
        Cassette {
            path: None,
            mode,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// Opens a cassette file. A missing file is an empty cassette in record
    /// mode and an error in replay mode.
    pub fn open(path: &Path, mode: CassetteMode) -> Result<Cassette, LlmError> {
        let err = |m: String| LlmError::Cassette {
            path: path.display().to_string(),
            message: m,
        };
        let mut entries = BTreeMap::new();
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let e: CassetteEntry =
                        serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                    entries.insert(e.fingerprint.clone(), e);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode != CassetteMode::Replay => {}
            Err(e) => return Err(err(e.to_string())),
        }
        Ok(Cassette {
            path: Some(path.to_path_buf()),
            mode,
            entries: Mutex::new(entries),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<CassetteEntry> {
        self.entries.lock().get(fingerprint).cloned()
    }

    pub fn insert(&self, entry: CassetteEntry) -> Result<(), LlmError> {
        let mut entries = self.entries.lock();
        entries.insert(entry.fingerprint.clone(), entry);
        self.persist(&entries)
    }

    fn persist(&self, entries: &BTreeMap<String, CassetteEntry>) -> Result<(), LlmError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut text = String::new();
        for e in entries.values() {
            text.push_str(&serde_json::to_string(e).expect("entry serializes"));
            text.push('\n');
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| LlmError::Cassette {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
        }
        std::fs::write(path, text).map_err(|e| LlmError::Cassette {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Connection settings, as found in the run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub cassette_path: Option<PathBuf>,
    pub cassette_mode: CassetteMode,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "teacher".into(),
            api_key_env: None,
            timeout_secs: 600,
            concurrency: 8,
            retry: RetryPolicy::default(),
            cassette_path: None,
            cassette_mode: CassetteMode::Passthrough,
        }
    }
}

/// The shareable client.
pub struct LlmClient {
    model: String,
    transport: Arc<dyn Transport>,
    cassette: Option<Arc<Cassette>>,
    retry: RetryPolicy,
    gate: Semaphore,
    sleeper: Box<dyn Fn(Duration) + Send + Sync>,
    cancel: Option<Arc<AtomicBool>>,
}

impl LlmClient {
    pub fn new(model: impl Into<String>, transport: Arc<dyn Transport>) -> LlmClient {
        LlmClient {
            model: model.into(),
            transport,
            cassette: None,
            retry: RetryPolicy::default(),
            gate: Semaphore::new(8),
            sleeper: Box::new(std::thread::sleep),
            cancel: None,
        }
    }

    /// Builds an HTTP client from config. The credential is read from the
    /// environment and kept in memory only.
    pub fn from_config(cfg: &LlmConfig) -> Result<LlmClient, LlmError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingCredential(var.clone()))?),
            None => None,
        };
        let replay = cfg.cassette_mode == CassetteMode::Replay;
        let transport: Arc<dyn Transport> = if replay {
            Arc::new(FnTransport(|_: &str, _: &ChatRequest| {
                Err(LlmError::TransportError("network disabled in replay mode".into()))
            }))
        } else {
            Arc::new(HttpTransport::new(&cfg.endpoint, api_key, Duration::from_secs(cfg.timeout_secs)))
        };
        let mut client = LlmClient::new(&cfg.model, transport)
            .with_retry(cfg.retry)
            .with_concurrency(cfg.concurrency);
        match (&cfg.cassette_path, cfg.cassette_mode) {
            (_, CassetteMode::Passthrough) => {}
            (Some(p), mode) => client = client.with_cassette(Arc::new(Cassette::open(p, mode)?)),
            (None, _) => {
                return Err(LlmError::Cassette {
                    path: String::new(),
                    message: "record/replay mode needs cassette_path".into(),
                })
            }
        }
        Ok(client)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, bound: usize) -> Self {
        self.gate = Semaphore::new(bound);
        self
    }

    pub fn with_cassette(mut self, cassette: Arc<Cassette>) -> Self {
        self.cassette = Some(cassette);
        self
    }

    /// Replaces `thread::sleep` between retries (tests).
    pub fn with_sleeper(mut self, f: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Box::new(f);
        self
    }

    /// Once `flag` is set, requests not answered by the cassette fail with
    /// [`LlmError::Cancelled`] instead of reaching the transport.
    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = Some(flag);
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn cassette(&self) -> Option<&Arc<Cassette>> {
        self.cassette.as_ref()
    }

    /// Completes with sample slot 0.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.complete_slot(request, 0)
    }

    /// Completes one request; `slot` distinguishes otherwise identical
    /// requests in the cassette.
    pub fn complete_slot(&self, request: &ChatRequest, slot: u32) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let start = Instant::now();
        let fingerprint = request_fingerprint(&self.model, request, slot);
        let mode = self.cassette.as_ref().map_or(CassetteMode::Passthrough, |c| c.mode());
        if let Some(c) = &self.cassette {
            if mode != CassetteMode::Passthrough {
                if let Some(hit) = c.get(&fingerprint) {
                    return Ok(ChatResponse {
                        completions: hit.response.completions,
                        usage: hit.response.usage,
                        latency: start.elapsed(),
                        replayed: true,
                    });
                }
                if mode == CassetteMode::Replay {
                    return Err(LlmError::ReplayMiss { fingerprint });
                }
            }
        }
        if self.cancel.as_ref().is_some_and(|f| f.load(Ordering::SeqCst)) {
            return Err(LlmError::Cancelled);
        }
        let wire = self.send_with_retry(request)?;
        if wire.completions.len() != request.n as usize {
            return Err(LlmError::MalformedResponse(format!(
                "expected {} completions, got {}",
                request.n,
                wire.completions.len()
            )));
        }
        if let (Some(c), CassetteMode::Record) = (&self.cassette, mode) {
            c.insert(CassetteEntry {
                fingerprint,
                model: self.model.clone(),
                slot,
                request: request.clone(),
                response: wire.clone(),
            })?;
        }
        Ok(ChatResponse {
            completions: wire.completions,
            usage: wire.usage,
            latency: start.elapsed(),
            replayed: false,
        })
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<WireResponse, LlmError> {
        let mut rng = rand::rng();
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.gate.acquire();
                self.transport.send(&self.model, request)
            };
            match result {
                Ok(r) => return Ok(r),
                Err(e) if e.is_transient() && attempt + 1 < self.retry.max_attempts.max(1) => {
                    let mut wait = self.retry.delay(attempt, &mut rng);
                    if let LlmError::RateLimited { retry_after: Some(ra) } = &e {
                        wait = wait.max(*ra);
                    }
                    log::warn!("attempt {} failed ({e}); retrying in {:?}", attempt + 1, wait);
                    (self.sleeper)(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// `g` single-sample completions of one prompt, one per slot, at the
    /// rollout temperature unless overridden. Slots run concurrently and are
    /// returned in slot order.
    pub fn sample_group(
        &self,
        messages: &[Message],
        g: usize,
        overrides: &SamplingOverrides,
    ) -> Result<Vec<String>, LlmError> {
        if g == 0 {
            return Err(LlmError::InvalidRequest("group size must be >= 1".into()));
        }
        let mut req = ChatRequest::new(messages.to_vec());
        req.temperature = ROLLOUT_TEMPERATURE;
        let req = req.with_sampling(overrides);
        let results: Vec<Result<String, LlmError>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..g)
                .map(|slot| {
                    let req = &req;
                    s.spawn(move || {
                        self.complete_slot(req, slot as u32)
                            .map(|r| r.completions.into_iter().next().unwrap_or_default())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampling thread")).collect()
        });
        results.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn echo() -> Arc<dyn Transport> {
        Arc::new(FnTransport(|_: &str, r: &ChatRequest| {
            Ok(WireResponse {
                completions: (0..r.n).map(|i| format!("{}#{i}", r.messages[0].content)).collect(),
                usage: Usage::default(),
            })
        }))
    }

    #[test]
    fn defaults_and_validation() {
        let r = ChatRequest::user("hi");
        assert_eq!((r.temperature, r.top_p, r.max_tokens, r.n), (0.6, 0.9, 4096, 1));
        assert!(ChatRequest::new(vec![]).validate().is_err());
        let mut bad = ChatRequest::user("x");
        bad.top_p = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn n_completions() {
        let c = LlmClient::new("m", echo());
        let mut r = ChatRequest::user("p");
        r.n = 3;
        assert_eq!(c.complete(&r).unwrap().completions.len(), 3);
    }

    #[test]
    fn record_then_replay() {
        let cassette = Arc::new(Cassette::in_memory(CassetteMode::Record));
        let c = LlmClient::new("m", echo()).with_cassette(cassette.clone());
        let group = c.sample_group(&[Message::user("q")], 5, &SamplingOverrides::default()).unwrap();
        assert_eq!(group.len(), 5);
        assert_eq!(cassette.len(), 5);

        let replay = Arc::new(Cassette::in_memory(CassetteMode::Replay));
        for fp in (0..5).map(|s| {
            let mut r = ChatRequest::user("q");
            r.temperature = ROLLOUT_TEMPERATURE;
            request_fingerprint("m", &r, s)
        }) {
            replay.insert(cassette.get(&fp).unwrap()).unwrap();
        }
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let offline: Arc<dyn Transport> = Arc::new(FnTransport(move |_: &str, _: &ChatRequest| {
            counter.fetch_add(1, Ordering::SeqCst);
            Err(LlmError::TransportError("offline".into()))
        }));
        let c2 = LlmClient::new("m", offline).with_cassette(replay);
        let again = c2.sample_group(&[Message::user("q")], 5, &SamplingOverrides::default()).unwrap();
        assert_eq!(again, group);
        assert_eq!(calls.load(Ordering::SeqCst), 0);
        let miss = c2.complete(&ChatRequest::user("other")).unwrap_err();
        assert!(matches!(miss, LlmError::ReplayMiss { fingerprint } if fingerprint.len() == 64));
    }

    #[test]
    fn retry_rules() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let flaky: Arc<dyn Transport> = Arc::new(FnTransport(move |_: &str, _: &ChatRequest| {
            if counter.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(LlmError::RateLimited { retry_after: None })
            } else {
                Ok(WireResponse {
                    completions: vec!["ok".into()],
                    usage: Usage::default(),
                })
            }
        }));
        let c = LlmClient::new("m", flaky).with_sleeper(|_| {});
        assert_eq!(c.complete(&ChatRequest::user("x")).unwrap().completions, ["ok"]);
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        for err in [LlmError::AuthFailure("no".into()), LlmError::MalformedResponse("x".into())] {
            let calls = Arc::new(AtomicUsize::new(0));
            let counter = calls.clone();
            let e2 = err.clone();
            let t: Arc<dyn Transport> = Arc::new(FnTransport(move |_: &str, _: &ChatRequest| {
                counter.fetch_add(1, Ordering::SeqCst);
                Err(e2.clone())
            }));
            let c = LlmClient::new("m", t).with_sleeper(|_| {});
            assert_eq!(c.complete(&ChatRequest::user("x")).unwrap_err(), err);
            assert_eq!(calls.load(Ordering::SeqCst), 1);
        }
    }

    #[test]
    fn backoff_ceiling() {
        let p = RetryPolicy::default();
        assert_eq!(p.ceiling(0), Duration::from_secs(1));
        assert_eq!(p.ceiling(3), Duration::from_secs(8));
        assert_eq!(p.ceiling(10), Duration::from_secs(60));
        let mut rng = rand::rng();
        for a in 0..8 {
            assert!(p.delay(a, &mut rng) <= p.ceiling(a));
        }
    }

    #[test]
    fn wire_parsing() {
        let v = json!({"choices": [{"message": {"content": "a"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let w = parse_wire_response(&v).unwrap();
        assert_eq!(w.completions, ["a"]);
        assert_eq!(w.usage.prompt_tokens, 3);
        assert!(parse_wire_response(&json!({})).is_err());
    }
}
