//! Chat-completion client: OpenAI-compatible HTTP backend with retries and
//! an append-only response cache, plus a deterministic offline mock.

mod cache;
mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::RngExt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::{HttpBackend, API_KEY_ENV};
pub use mock::{MockBackend, MockMode, MockPolicy, TruthIndex, UNPARSABLE_REPLY};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 8;
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest {
            model: model.into(),
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub from_cache: bool,
    pub attempts: u32,
}

/// SHA-256 over length-prefixed (model, prompt, temperature bits,
/// max_tokens), hex encoded.
pub fn cache_key(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"chat-cache-v1");
    for field in [request.model.as_bytes(), request.prompt.as_bytes()] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hasher.update(request.temperature.to_bits().to_le_bytes());
    hasher.update(u64::from(request.max_tokens).to_le_bytes());
    hex::encode(hasher.finalize())
}

/// Failure reported by a backend for one attempt.
#[derive(Debug)]
pub enum AttemptError {
    /// 429, 5xx, timeouts: worth another try.
    Transient(String),
    Fatal(LlmError),
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, AttemptError>;

    /// Whether calls leave the process.
    fn is_remote(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Relative jitter, e.g. 0.2 for ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32, rng: &mut impl rand::Rng) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * self.factor.powi(retry as i32 - 1);
        let jitter = if self.jitter > 0.0 {
            rng.random_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        Duration::from_secs_f64((nominal * (1.0 + jitter)).max(0.0))
    }
}

/// Counting semaphore bounding in-flight backend calls.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(slots: usize) -> Self {
        Gate {
            free: Mutex::new(slots.max(1)),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
        out
    }
}

pub struct LlmClient {
    backend: Box<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    gate: Gate,
    parallelism: usize,
    backend_calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        LlmClient {
            backend: Box::new(backend),
            cache: None,
            retry: RetryPolicy::default(),
            gate: Gate::new(DEFAULT_PARALLELISM),
            parallelism: DEFAULT_PARALLELISM,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self.gate = Gate::new(self.parallelism);
        self
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    /// Backend attempts made so far, cache hits excluded.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    /// Network calls made so far; always zero for an in-process backend.
    pub fn network_calls(&self) -> usize {
        if self.backend.is_remote() {
            self.backend_calls()
        } else {
            0
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatReply, LlmError> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(content) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(ChatReply {
                content,
                from_cache: true,
                attempts: 1,
            });
        }
        let mut rng = rand::rng();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.gate.run(|| self.backend.send(request)) {
                Ok(content) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&key, &content)?;
                    }
                    return Ok(ChatReply {
                        content,
                        from_cache: false,
                        attempts: attempt,
                    });
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(last)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(LlmError::RetriesExhausted {
                            attempts: attempt,
                            last,
                        });
                    }
                    std::thread::sleep(self.retry.delay(attempt, &mut rng));
                }
            }
        }
    }
}
