//! Remote chat-completion drivers: sampling parameters, a retrying client
//! with bounded in-flight requests, an HTTP transport, an in-process stub, and
//! the judge and mechanism-tagger calls built on them.

mod http;
mod stub;

pub use http::{http_backends_constructed, HttpBackend};
pub use stub::{Responder, StubBackend};

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::prompts::{JUDGE_SYSTEM_PROMPT, JUDGE_USER_PROMPT, TAGGER_PROMPT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self::reasoning()
    }
}

impl SamplingParams {
    /// Models that reason before answering.
    pub fn reasoning() -> Self {
        Self { temperature: 0.7, top_p: 0.95, top_k: 50, max_tokens: 1024 }
    }

    /// Models that answer with the JSON estimate alone.
    pub fn direct() -> Self {
        Self { max_tokens: 30, ..Self::reasoning() }
    }

    /// Deterministic decoding for judging and tagging.
    pub fn greedy(max_tokens: u32) -> Self {
        Self { temperature: 0.0, top_p: 1.0, top_k: 1, max_tokens }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) || self.top_k == 0 || self.max_tokens == 0 {
            return Err(Error::Validation(format!("invalid sampling parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Attempts after the first.
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 4, base_backoff_ms: 250, max_backoff_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, base_backoff_ms: 0, max_backoff_ms: 0 }
    }

    /// Exponential backoff with up to one base interval of uniform jitter.
    fn delay(&self, attempt: u32) -> Duration {
        if self.base_backoff_ms == 0 {
            return Duration::ZERO;
        }
        let exp = self.base_backoff_ms.saturating_mul(1u64 << attempt.min(20));
        let jitter = rand::rng().random_range(0..=self.base_backoff_ms);
        Duration::from_millis(exp.min(self.max_backoff_ms).saturating_add(jitter))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if the server needs one.
    pub auth_env: Option<String>,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    /// Extra top-level request fields, e.g. server-specific continuation flags.
    pub extra_body: serde_json::Map<String, serde_json::Value>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            auth_env: None,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            timeout_secs: 120,
            extra_body: serde_json::Map::new(),
        }
    }
}

impl BackendConfig {
    /// Keys: `endpoint`, `model`, `auth_env`, `max_in_flight`, `timeout_secs`,
    /// `retry.max_retries`, `retry.base_backoff_ms`, `retry.max_backoff_ms`, and
    /// `extra.<field> = <json>` for additional request fields.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let mut extra_body = serde_json::Map::new();
        for (k, v) in cfg.iter() {
            if let Some(field) = k.strip_prefix("extra.") {
                let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                extra_body.insert(field.to_string(), value);
            }
        }
        let out = Self {
            endpoint: cfg.get("endpoint").unwrap_or(&d.endpoint).to_string(),
            model: cfg.get("model").unwrap_or(&d.model).to_string(),
            auth_env: cfg.get("auth_env").filter(|s| !s.is_empty()).map(str::to_string),
            max_in_flight: cfg.get_or("max_in_flight", d.max_in_flight)?,
            retry: RetryPolicy {
                max_retries: cfg.get_or("retry.max_retries", d.retry.max_retries)?,
                base_backoff_ms: cfg.get_or("retry.base_backoff_ms", d.retry.base_backoff_ms)?,
                max_backoff_ms: cfg.get_or("retry.max_backoff_ms", d.retry.max_backoff_ms)?,
            },
            timeout_secs: cfg.get_or("timeout_secs", d.timeout_secs)?,
            extra_body,
        };
        if out.max_in_flight == 0 {
            return Err(Error::Validation("max_in_flight must be at least 1".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub params: SamplingParams,
}

impl ChatRequest {
    pub fn new(system: Option<&str>, user: &str, params: SamplingParams) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(s) = system {
            messages.push(ChatMessage::system(s));
        }
        messages.push(ChatMessage::user(user));
        Self { messages, params }
    }

    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.messages)
    }
}

/// SHA-256 over the role and content of every message.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_bytes());
        h.update([0u8]);
        h.update(m.content.as_bytes());
        h.update([0u8]);
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), prompt_tokens: None, completion_tokens: None }
    }
}

/// Outcome of one transport attempt.
#[derive(Debug)]
pub enum AttemptError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    Transient(String),
    Permanent(Error),
}

/// A chat-completion transport. One call is one attempt; retries live in [`ChatClient`].
pub trait ChatBackend: Send + Sync {
    fn attempt(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, AttemptError>;
    fn endpoint(&self) -> &str;
    fn model(&self) -> &str;
}

/// A completion with everything needed to attribute it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteCompletion {
    pub request_id: String,
    pub text: String,
    pub endpoint: String,
    pub model: String,
    pub params: SamplingParams,
    pub prompt_hash: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub request_id: String,
    pub started: chrono::DateTime<chrono::Utc>,
    pub finished: chrono::DateTime<chrono::Utc>,
    pub endpoint: String,
    pub model: String,
    pub prompt_hash: String,
    pub params: SamplingParams,
    pub attempts: u32,
    pub accepted: bool,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub error: Option<String>,
}

/// Append-only JSON Lines log, one entry per logical request.
#[derive(Debug)]
pub struct RequestLog {
    file: Mutex<File>,
}

impl RequestLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn append(&self, entry: &RequestLogEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        self.file.lock().write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<RequestLogEntry>> {
        let text = std::fs::read_to_string(path)?;
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }
}

/// Counting semaphore bounding concurrent requests through one client.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable client: retries, request logging, and at most `max_in_flight`
/// concurrent attempts.
#[derive(Clone)]
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    max_in_flight: usize,
    permits: Arc<Permits>,
    log: Option<Arc<RequestLog>>,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.backend.endpoint())
            .field("model", &self.backend.model())
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        let max_in_flight = max_in_flight.max(1);
        Self {
            backend,
            retry,
            max_in_flight,
            permits: Arc::new(Permits { free: Mutex::new(max_in_flight), cv: Condvar::new() }),
            log: None,
        }
    }

    /// An HTTP client for `cfg`.
    pub fn http(cfg: &BackendConfig) -> Result<Self> {
        Ok(Self::new(Arc::new(HttpBackend::new(cfg)?), cfg.retry, cfg.max_in_flight))
    }

    pub fn with_log(mut self, log: RequestLog) -> Self {
        self.log = Some(Arc::new(log));
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn backend(&self) -> &dyn ChatBackend {
        self.backend.as_ref()
    }

    /// Send one request, retrying transient failures. Exactly one log entry is
    /// written per call, carrying a fresh request id.
    pub fn complete(&self, request: &ChatRequest) -> Result<RemoteCompletion> {
        request.params.validate()?;
        let request_id = uuid::Uuid::new_v4().to_string();
        let hash = request.prompt_hash();
        let started = chrono::Utc::now();
        let clock = Instant::now();
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            let outcome = {
                let _permit = self.permits.acquire();
                self.backend.attempt(request)
            };
            match outcome {
                Ok(resp) => break Ok(resp),
                Err(AttemptError::Permanent(e)) => break Err(e),
                Err(AttemptError::Transient(msg)) => {
                    if attempts > self.retry.max_retries {
                        break Err(Error::Backend(format!("{msg} (after {attempts} attempts)")));
                    }
                    tracing::debug!(%request_id, attempts, %msg, "retrying chat request");
                    std::thread::sleep(self.retry.delay(attempts - 1));
                }
            }
        };
        if let Some(log) = &self.log {
            let (prompt_tokens, completion_tokens) = match &result {
                Ok(r) => (r.prompt_tokens, r.completion_tokens),
                Err(_) => (None, None),
            };
            log.append(&RequestLogEntry {
                request_id: request_id.clone(),
                started,
                finished: chrono::Utc::now(),
                endpoint: self.backend.endpoint().to_string(),
                model: self.backend.model().to_string(),
                prompt_hash: hash.clone(),
                params: request.params,
                attempts,
                accepted: result.is_ok(),
                latency_ms: clock.elapsed().as_millis() as u64,
                prompt_tokens,
                completion_tokens,
                error: result.as_ref().err().map(ToString::to_string),
            })?;
        }
        let resp = result?;
        Ok(RemoteCompletion {
            request_id,
            text: resp.text,
            endpoint: self.backend.endpoint().to_string(),
            model: self.backend.model().to_string(),
            params: request.params,
            prompt_hash: hash,
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
        })
    }
}

/// First choice's text for an optional system message and a user message.
pub fn chat_complete(client: &ChatClient, system: Option<&str>, user: &str, params: SamplingParams) -> Result<String> {
    Ok(client.complete(&ChatRequest::new(system, user, params))?.text)
}

/// Ask the model to continue a partially written assistant turn.
pub fn continue_chat(client: &ChatClient, user: &str, assistant_prefix: &str, params: SamplingParams) -> Result<String> {
    let request = ChatRequest {
        messages: vec![ChatMessage::user(user), ChatMessage::assistant(assistant_prefix)],
        params,
    };
    Ok(client.complete(&request)?.text)
}

/// G completions of one prompt. Incomplete groups keep whatever succeeded and
/// say why the rest failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_index: usize,
    pub completions: Vec<RemoteCompletion>,
    pub failures: Vec<String>,
}

impl RolloutGroup {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Run `group_size` completions for every prompt over at most
/// `client.max_in_flight()` worker threads. A failing request marks only its
/// own group incomplete.
pub fn batch_rollouts(
    client: &ChatClient,
    system: Option<&str>,
    prompts: &[String],
    params: SamplingParams,
    group_size: usize,
) -> Result<Vec<RolloutGroup>> {
    if group_size == 0 {
        return Err(Error::domain("group size must be at least 1"));
    }
    params.validate()?;
    let jobs: Vec<(usize, usize)> = (0..prompts.len()).flat_map(|p| (0..group_size).map(move |g| (p, g))).collect();
    let results: Vec<Mutex<Option<Result<RemoteCompletion>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let workers = client.max_in_flight().min(jobs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&(p, _)) = jobs.get(i) else { break };
                let r = client.complete(&ChatRequest::new(system, &prompts[p], params));
                *results[i].lock() = Some(r);
            });
        }
    });
    let mut groups: Vec<RolloutGroup> =
        (0..prompts.len()).map(|p| RolloutGroup { prompt_index: p, completions: Vec::new(), failures: Vec::new() }).collect();
    for ((p, g), slot) in jobs.into_iter().zip(results) {
        match slot.into_inner().expect("every job ran") {
            Ok(c) => groups[p].completions.push(c),
            Err(e) => groups[p].failures.push(format!("completion {g}: {e}")),
        }
    }
    for g in groups.iter().filter(|g| !g.is_complete()) {
        tracing::warn!(prompt = g.prompt_index, failures = g.failures.len(), "rollout group incomplete");
    }
    Ok(groups)
}

/// Prompts for the quality judge; the defaults are the published texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgePrompts {
    pub system: String,
    pub user: String,
    pub max_tokens: u32,
}

impl Default for JudgePrompts {
    fn default() -> Self {
        Self { system: JUDGE_SYSTEM_PROMPT.into(), user: JUDGE_USER_PROMPT.into(), max_tokens: 16 }
    }
}

/// The first integer in a judge reply, which must lie in 0..=100.
pub fn parse_judge_score(reply: &str) -> Result<u8> {
    static INT: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = INT.get_or_init(|| Regex::new(r"-?\d+").expect("valid regex"));
    let m = re.find(reply).ok_or_else(|| Error::JudgeParse(format!("no integer in {reply:?}")))?;
    let v: i64 = m
        .as_str()
        .parse()
        .map_err(|_| Error::JudgeParse(format!("integer out of range in {reply:?}")))?;
    if !(0..=100).contains(&v) {
        return Err(Error::JudgeParse(format!("score {v} outside 0..=100")));
    }
    Ok(v as u8)
}

/// Score a question-plus-completion text from 0 to 100 at temperature 0.
pub fn judge_completion(client: &ChatClient, question_and_completion: &str) -> Result<u8> {
    judge_completion_with(client, question_and_completion, &JudgePrompts::default())
}

pub fn judge_completion_with(client: &ChatClient, question_and_completion: &str, prompts: &JudgePrompts) -> Result<u8> {
    let user = format!("{}\n\n{question_and_completion}", prompts.user);
    let reply = chat_complete(client, Some(&prompts.system), &user, SamplingParams::greedy(prompts.max_tokens))?;
    parse_judge_score(&reply)
}

/// Trim, collapse inner whitespace, and capitalize each word.
pub fn normalize_tag(tag: &str) -> String {
    tag.split_whitespace()
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(c) => c.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect::<String>(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse a tagger reply: a JSON list of strings, optionally fenced or
/// surrounded by prose. Labels come back normalized, empties dropped.
pub fn parse_tags(reply: &str) -> Result<Vec<String>> {
    let trimmed = reply.trim();
    let value: serde_json::Value = match serde_json::from_str(trimmed) {
        Ok(v) => v,
        Err(_) => {
            let (Some(start), Some(end)) = (trimmed.find('['), trimmed.rfind(']')) else {
                return Err(Error::TagParse(format!("no JSON list in {reply:?}")));
            };
            if end < start {
                return Err(Error::TagParse(format!("no JSON list in {reply:?}")));
            }
            serde_json::from_str(&trimmed[start..=end]).map_err(|e| Error::TagParse(e.to_string()))?
        }
    };
    let items = value.as_array().ok_or_else(|| Error::TagParse(format!("expected a JSON list, got {value}")))?;
    items
        .iter()
        .map(|v| {
            v.as_str()
                .map(normalize_tag)
                .ok_or_else(|| Error::TagParse(format!("list entry {v} is not a string")))
        })
        .filter(|r| r.as_ref().map_or(true, |s| !s.is_empty()))
        .collect()
}

/// Mechanism labels for one thought, at temperature 0.
pub fn tag_mechanisms(client: &ChatClient, thought: &str) -> Result<Vec<String>> {
    let user = format!("{TAGGER_PROMPT}\n\n{thought}");
    parse_tags(&chat_complete(client, None, &user, SamplingParams::greedy(128))?)
}
