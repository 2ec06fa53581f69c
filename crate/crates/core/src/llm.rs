//! Provider-neutral chat completion with live, record and replay backends.
//!
//! Every request is keyed by a SHA-256 over the fields that determine the
//! model's answer. The record backend appends each new answer to a JSONL
//! transcript; the replay backend answers exclusively from that transcript,
//! so runs driven by a transcript never touch the network.
//!
//! `max_output_tokens` is deliberately not part of the request hash: raising
//! or lowering an output cap does not invalidate a recorded transcript.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_ENV: &str = "CAUSAL_RAG_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no transcript entry for request {0}")]
    ReplayMiss(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
}

impl LlmError {
    /// Errors where retrying later with the same transcript could succeed.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            LlmError::Transport { .. }
                | LlmError::RateLimited { .. }
                | LlmError::Http { .. }
                | LlmError::ReplayMiss(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Version of the prompt catalog the texts were drawn from.
    #[serde(default)]
    pub catalog_version: String,
}

impl CompletionRequest {
    pub fn new(
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        model_id: impl Into<String>,
    ) -> Self {
        CompletionRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: 512,
            catalog_version: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("user text is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} is not >= 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Model id and decoding parameters applied to every task prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ModelSettings {
    pub fn new(model_id: impl Into<String>) -> Self {
        ModelSettings {
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub response_text: String,
    pub timestamp: DateTime<Utc>,
}

/// Hex SHA-256 over model id, system text, user text, temperature and
/// catalog version. Fields are length-prefixed so no two field splits collide.
pub fn request_hash(req: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    for field in [
        req.model_id.as_bytes(),
        req.system_text.as_bytes(),
        req.user_text.as_bytes(),
        &req.temperature.to_bits().to_le_bytes(),
        req.catalog_version.as_bytes(),
    ] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    hex::encode(h.finalize())
}

/// A source of completions: an HTTP endpoint or a scripted stand-in.
pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Full-jitter delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let cap = self
            .base_delay
            .saturating_mul(1u32 << (attempt - 1).min(20));
        if cap.is_zero() {
            return cap;
        }
        let nanos = rand::thread_rng().gen_range(0..=cap.as_nanos().min(u64::MAX as u128) as u64);
        Duration::from_nanos(nanos)
    }
}

pub(crate) enum Attempt<T> {
    Done(T),
    Retry(LlmError),
    Fail(LlmError),
}

/// Runs `op` until it succeeds, fails permanently, or runs out of attempts.
pub(crate) fn with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Attempt<T>,
) -> Result<T, LlmError> {
    let mut attempt = 1;
    loop {
        match op() {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(e) => {
                if attempt >= policy.max_attempts {
                    return Err(match e {
                        LlmError::RateLimited { .. } => LlmError::RateLimited { attempts: attempt },
                        LlmError::Transport { message, .. } => LlmError::Transport {
                            attempts: attempt,
                            message,
                        },
                        other => other,
                    });
                }
                log::warn!("attempt {attempt} failed ({e}); retrying");
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
        }
    }
}

/// Classifies a blocking HTTP outcome for the retry loop.
pub(crate) fn classify_http(
    result: reqwest::Result<reqwest::blocking::Response>,
) -> Attempt<serde_json::Value> {
    let resp = match result {
        Ok(r) => r,
        Err(e) => {
            return Attempt::Retry(LlmError::Transport {
                attempts: 1,
                message: e.to_string(),
            })
        }
    };
    let status = resp.status();
    if status.as_u16() == 429 {
        return Attempt::Retry(LlmError::RateLimited { attempts: 1 });
    }
    let body = match resp.text() {
        Ok(b) => b,
        Err(e) => {
            return Attempt::Retry(LlmError::Transport {
                attempts: 1,
                message: e.to_string(),
            })
        }
    };
    if !status.is_success() {
        return Attempt::Fail(LlmError::Http {
            status: status.as_u16(),
            body,
        });
    }
    match serde_json::from_str(&body) {
        Ok(v) => Attempt::Done(v),
        Err(e) => Attempt::Fail(LlmError::BadResponse(e.to_string())),
    }
}

pub(crate) fn endpoint(base_url: &str, path: &str) -> String {
    let base = base_url.trim_end_matches('/');
    if base.ends_with("/v1") {
        format!("{base}/{path}")
    } else {
        format!("{base}/v1/{path}")
    }
}

pub(crate) fn http_client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("TLS backend unavailable")
}

/// OpenAI-compatible `/v1/chat/completions` client.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpChatBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        HttpChatBackend {
            client: http_client(Duration::from_secs(120)),
            url: endpoint(base_url, "chat/completions"),
            api_key,
            retry: RetryPolicy::default(),
        }
    }

    /// Reads the bearer token from `CAUSAL_RAG_API_KEY`.
    pub fn from_env(base_url: &str) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatBackend for HttpChatBackend {
    fn send(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let mut messages = Vec::with_capacity(2);
        if !req.system_text.is_empty() {
            messages.push(ChatMessage {
                role: "system",
                content: &req.system_text,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: &req.user_text,
        });
        let body = ChatBody {
            model: &req.model_id,
            messages,
            temperature: req.temperature,
            max_tokens: req.max_output_tokens,
        };
        let value = with_retry(&self.retry, || {
            let mut rb = self.client.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                rb = rb.bearer_auth(key);
            }
            classify_http(rb.send())
        })?;
        let reply: ChatReply =
            serde_json::from_value(value).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let choice = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::BadResponse("no choices".into()))?;
        let mut provider_meta = BTreeMap::new();
        if let Some(reason) = choice.finish_reason {
            provider_meta.insert("finish_reason".into(), serde_json::Value::String(reason));
        }
        if let Some(usage) = reply.usage {
            provider_meta.insert("usage".into(), usage);
        }
        Ok(CompletionResponse {
            text: choice.message.content.unwrap_or_default(),
            provider_meta,
        })
    }
}

type Script = dyn Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync;

/// Answers requests with a closure and counts how often it was called.
pub struct ScriptedBackend {
    script: Box<Script>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(
        script: impl Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedBackend {
            script: Box::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers with the same text.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.script)(req).map(|text| CompletionResponse {
            text,
            provider_meta: BTreeMap::new(),
        })
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn send(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).send(req)
    }
}

/// Append-only request-hash → response log.
pub struct Transcript {
    entries: RwLock<HashMap<String, String>>,
    writer: Option<(PathBuf, Mutex<File>)>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Transcript {
            entries: RwLock::new(HashMap::new()),
            writer: None,
        }
    }

    fn read_entries(path: &Path) -> Result<HashMap<String, String>, LlmError> {
        let err = |message: String| LlmError::Transcript {
            path: path.to_path_buf(),
            message,
        };
        let mut entries = HashMap::new();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(entries),
            Err(e) => return Err(err(e.to_string())),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            // First recorded answer wins.
            entries
                .entry(entry.request_hash)
                .or_insert(entry.response_text);
        }
        Ok(entries)
    }

    /// Loads a transcript for lookup only. A missing file is an error.
    pub fn open_read_only(path: &Path) -> Result<Self, LlmError> {
        if !path.exists() {
            return Err(LlmError::Transcript {
                path: path.to_path_buf(),
                message: "file not found".into(),
            });
        }
        Ok(Transcript {
            entries: RwLock::new(Self::read_entries(path)?),
            writer: None,
        })
    }

    /// Loads existing entries (if any) and appends new ones to the same file.
    pub fn open_append(path: &Path) -> Result<Self, LlmError> {
        let entries = Self::read_entries(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Transcript {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        Ok(Transcript {
            entries: RwLock::new(entries),
            writer: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, hash: &str) -> Option<String> {
        self.entries.read().unwrap().get(hash).cloned()
    }

    /// Records a response unless the hash is already present. Returns the
    /// text that is now on record for `hash`.
    pub fn append(&self, hash: &str, response_text: &str) -> Result<String, LlmError> {
        let mut entries = self.entries.write().unwrap();
        if let Some(existing) = entries.get(hash) {
            return Ok(existing.clone());
        }
        if let Some((path, file)) = &self.writer {
            let entry = TranscriptEntry {
                request_hash: hash.to_string(),
                response_text: response_text.to_string(),
                timestamp: Utc::now(),
            };
            let mut line = serde_json::to_string(&entry).expect("transcript entry serializes");
            line.push('\n');
            let mut f = file.lock().unwrap();
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| LlmError::Transcript {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        entries.insert(hash.to_string(), response_text.to_string());
        Ok(response_text.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
    Record,
}

impl std::str::FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendMode::Live),
            "replay" => Ok(BackendMode::Replay),
            "record" => Ok(BackendMode::Record),
            other => Err(format!(
                "unknown backend {other:?} (expected live, replay or record)"
            )),
        }
    }
}

impl std::fmt::Display for BackendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendMode::Live => "live",
            BackendMode::Replay => "replay",
            BackendMode::Record => "record",
        })
    }
}

/// Routes completion requests according to a [`BackendMode`].
pub struct Gateway {
    mode: BackendMode,
    backend: Option<Arc<dyn ChatBackend>>,
    transcript: Option<Arc<Transcript>>,
}

impl Gateway {
    pub fn live(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            mode: BackendMode::Live,
            backend: Some(backend),
            transcript: None,
        }
    }

    pub fn replay(transcript: Arc<Transcript>) -> Self {
        Gateway {
            mode: BackendMode::Replay,
            backend: None,
            transcript: Some(transcript),
        }
    }

    pub fn record(backend: Arc<dyn ChatBackend>, transcript: Arc<Transcript>) -> Self {
        Gateway {
            mode: BackendMode::Record,
            backend: Some(backend),
            transcript: Some(transcript),
        }
    }

    pub fn mode(&self) -> BackendMode {
        self.mode
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let text = match self.mode {
            BackendMode::Live => self.backend().send(req)?.text,
            BackendMode::Replay => {
                let hash = request_hash(req);
                self.transcript()
                    .lookup(&hash)
                    .ok_or(LlmError::ReplayMiss(hash))?
            }
            BackendMode::Record => {
                let hash = request_hash(req);
                let transcript = self.transcript();
                match transcript.lookup(&hash) {
                    Some(text) => text,
                    None => {
                        let text = self.backend().send(req)?.text;
                        transcript.append(&hash, &text)?
                    }
                }
            }
        };
        if text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(CompletionResponse {
            text,
            provider_meta: BTreeMap::new(),
        })
    }

    fn backend(&self) -> &dyn ChatBackend {
        self.backend
            .as_deref()
            .expect("live and record gateways own a backend")
    }

    fn transcript(&self) -> &Transcript {
        self.transcript
            .as_deref()
            .expect("replay and record gateways own a transcript")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> CompletionRequest {
        CompletionRequest::new("sys", "Is this causal?", "model-a")
    }

    #[test]
    fn request_hash_is_stable_and_sensitive() {
        let a = req();
        assert_eq!(request_hash(&a), request_hash(&a.clone()));
        assert_eq!(request_hash(&a).len(), 64);

        let mut t = a.clone();
        t.temperature += 0.1;
        assert_ne!(request_hash(&a), request_hash(&t));

        let mut u = a.clone();
        u.user_text = "Is this causal!".into();
        assert_ne!(request_hash(&a), request_hash(&u));

        let mut v = a.clone();
        v.catalog_version = "2".into();
        assert_ne!(request_hash(&a), request_hash(&v));

        let mut m = a.clone();
        m.max_output_tokens = 9;
        assert_eq!(request_hash(&a), request_hash(&m));

        // Length prefixes keep field boundaries distinct.
        let mut s1 = a.clone();
        s1.system_text = "ab".into();
        s1.user_text = "c".into();
        let mut s2 = a.clone();
        s2.system_text = "a".into();
        s2.user_text = "bc".into();
        assert_ne!(request_hash(&s1), request_hash(&s2));
    }

    #[test]
    fn replay_hit_and_miss() {
        let transcript = Arc::new(Transcript::in_memory());
        transcript.append(&request_hash(&req()), "1").unwrap();
        let gw = Gateway::replay(transcript);
        assert_eq!(gw.complete(&req()).unwrap().text, "1");

        let mut other = req();
        other.user_text = "different".into();
        match gw.complete(&other) {
            Err(LlmError::ReplayMiss(h)) => assert_eq!(h, request_hash(&other)),
            r => panic!("expected miss, got {r:?}"),
        }
    }

    #[test]
    fn record_calls_backend_once_per_request() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let backend = Arc::new(ScriptedBackend::constant("0"));
        let gw = Gateway::record(
            backend.clone(),
            Arc::new(Transcript::open_append(&path).unwrap()),
        );
        assert_eq!(gw.complete(&req()).unwrap().text, "0");
        assert_eq!(gw.complete(&req()).unwrap().text, "0");
        assert_eq!(backend.calls(), 1);

        let reopened = Transcript::open_read_only(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.lookup(&request_hash(&req())).as_deref(), Some("0"));
    }

    #[test]
    fn transcript_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        {
            let t = Transcript::open_append(&path).unwrap();
            t.append("aa", "first").unwrap();
            t.append("bb", "second").unwrap();
            assert_eq!(t.append("aa", "changed").unwrap(), "first");
        }
        let before = std::fs::read_to_string(&path).unwrap();
        {
            let t = Transcript::open_append(&path).unwrap();
            t.append("cc", "third").unwrap();
        }
        let after = std::fs::read_to_string(&path).unwrap();
        assert!(after.starts_with(&before));
        assert_eq!(after.lines().count(), 3);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let gw = Gateway::live(Arc::new(ScriptedBackend::constant("  ")));
        assert!(matches!(
            gw.complete(&req()),
            Err(LlmError::EmptyCompletion)
        ));
    }

    #[test]
    fn invalid_requests_rejected() {
        let gw = Gateway::live(Arc::new(ScriptedBackend::constant("1")));
        let mut r = req();
        r.user_text = " ".into();
        assert!(matches!(gw.complete(&r), Err(LlmError::InvalidRequest(_))));
        let mut r = req();
        r.temperature = -1.0;
        assert!(matches!(gw.complete(&r), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn retry_stops_after_max_attempts() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::ZERO,
        };
        let mut n = 0;
        let r: Result<(), _> = with_retry(&policy, || {
            n += 1;
            Attempt::Retry(LlmError::RateLimited { attempts: 1 })
        });
        assert_eq!(n, 5);
        assert!(matches!(r, Err(LlmError::RateLimited { attempts: 5 })));

        let mut n = 0;
        let r: Result<(), _> = with_retry(&policy, || {
            n += 1;
            Attempt::Fail(LlmError::Http {
                status: 400,
                body: String::new(),
            })
        });
        assert_eq!(n, 1);
        assert!(r.is_err());
    }

    #[test]
    fn backoff_is_bounded_by_doubling_cap() {
        let policy = RetryPolicy::default();
        for attempt in 1..=4 {
            let cap = Duration::from_secs(1 << (attempt - 1));
            for _ in 0..50 {
                assert!(policy.delay(attempt) <= cap);
            }
        }
    }

    #[test]
    fn endpoint_joins_paths() {
        assert_eq!(
            endpoint("http://h:1", "embeddings"),
            "http://h:1/v1/embeddings"
        );
        assert_eq!(
            endpoint("http://h:1/v1/", "chat/completions"),
            "http://h:1/v1/chat/completions"
        );
    }
}
