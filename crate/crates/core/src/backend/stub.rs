use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::Mutex;

use super::{AttemptError, ChatBackend, ChatRequest, ChatResponse};

pub type Responder = Box<dyn Fn(&ChatRequest) -> std::result::Result<String, AttemptError> + Send + Sync>;

/// In-process backend for tests and offline runs. Replies come from, in order:
/// queued failures, canned replies keyed by prompt hash, the responder, the default.
pub struct StubBackend {
    canned: HashMap<String, String>,
    default: Option<String>,
    responder: Option<Responder>,
    failures: Mutex<VecDeque<AttemptError>>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    seen: Mutex<Vec<ChatRequest>>,
}

impl std::fmt::Debug for StubBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StubBackend").field("canned", &self.canned.len()).field("calls", &self.calls()).finish()
    }
}

impl Default for StubBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl StubBackend {
    pub fn new() -> Self {
        Self {
            canned: HashMap::new(),
            default: None,
            responder: None,
            failures: Mutex::new(VecDeque::new()),
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default = Some(reply.into());
        self
    }

    pub fn with_canned(mut self, prompt_hash: impl Into<String>, reply: impl Into<String>) -> Self {
        self.canned.insert(prompt_hash.into(), reply.into());
        self
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&ChatRequest) -> std::result::Result<String, AttemptError> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    /// Fail the next attempts with these errors before answering normally.
    pub fn fail_next(self, errors: impl IntoIterator<Item = AttemptError>) -> Self {
        self.failures.lock().extend(errors);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().clone()
    }
}

impl ChatBackend for StubBackend {
    fn attempt(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, AttemptError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        self.seen.lock().push(request.clone());
        let out = if let Some(e) = self.failures.lock().pop_front() {
            Err(e)
        } else if let Some(reply) = self.canned.get(&request.prompt_hash()) {
            Ok(reply.clone())
        } else if let Some(f) = &self.responder {
            f(request)
        } else if let Some(d) = &self.default {
            Ok(d.clone())
        } else {
            Err(AttemptError::Permanent(crate::Error::Backend("stub has no reply for this prompt".into())))
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out.map(ChatResponse::text)
    }

    fn endpoint(&self) -> &str {
        "stub://local"
    }

    fn model(&self) -> &str {
        "stub"
    }
}
