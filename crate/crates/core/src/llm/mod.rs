//! Chat-completion client shared by every LLM-backed stage.
//!
//! [`LlmClient`] owns the retry, rate-limit, concurrency and caching policy;
//! the wire is behind [`Transport`], implemented by the HTTP client and by
//! the scripted mock used for offline runs.

mod cache;
mod http;
mod limit;
mod mock;

use std::path::Path;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, ResponseCache};
pub use http::HttpTransport;
pub use limit::{map_concurrent, RateLimiter, Semaphore};
pub use mock::{prompt_hash, FnTransport, MockMatch, MockRule, ScriptedMock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    pub response_text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    /// Network attempts made; 0 when served from the cache.
    pub attempts: u32,
}

/// Connection and policy settings for one model server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub backoff_base_ms: u64,
    /// Whitespace-token budget for documents placed in a prompt.
    pub context_budget_tokens: Option<usize>,
    /// Serve responses from a mock script instead of the network.
    pub mock_script: Option<PathBuf>,
}

impl Default for LlmEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: String::new(),
            temperature: 0.0,
            max_tokens: 2048,
            timeout_secs: 120,
            max_retries: 5,
            max_in_flight: 16,
            requests_per_minute: None,
            api_key_env: None,
            backoff_base_ms: 1000,
            context_budget_tokens: None,
            mock_script: None,
        }
    }
}

impl LlmEndpoint {
    pub fn mock(model: &str) -> Self {
        Self {
            model: model.into(),
            backoff_base_ms: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self, field: &str) -> Result<(), String> {
        if self.model.trim().is_empty() {
            return Err(format!("{field}.model: must be set"));
        }
        if self.max_in_flight == 0 {
            return Err(format!("{field}.max_in_flight: must be >= 1"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("{field}.temperature: must be >= 0"));
        }
        if self.requests_per_minute == Some(0) {
            return Err(format!("{field}.requests_per_minute: must be >= 1"));
        }
        if self.mock_script.is_none() && url::Url::parse(&self.base_url).is_err() {
            return Err(format!("{field}.base_url: not an absolute URL"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("{model}: request rejected with HTTP {status}: {body}")]
    Permanent { model: String, status: u16, body: String },

    #[error("{model}: retries exhausted after {attempts} attempts: {last}")]
    Exhausted { model: String, attempts: u32, last: String },

    #[error("{model}: malformed response: {detail}")]
    Malformed { model: String, detail: String },

    #[error("invalid chat request: {0}")]
    InvalidRequest(String),

    #[error("endpoint setup: {0}")]
    Setup(String),
}

pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [Message],
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Status { code: u16, body: String },
    Timeout,
    Network(String),
    Malformed(String),
}

impl TransportError {
    /// 429, 5xx, timeouts and connection failures are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportError::Timeout | TransportError::Network(_) => true,
            TransportError::Malformed(_) => false,
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Timeout => f.write_str("timed out"),
            TransportError::Network(e) => write!(f, "network: {e}"),
            TransportError::Malformed(e) => write!(f, "malformed: {e}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest<'_>) -> Result<Reply, TransportError>;
}

/// Upper bound of the jittered delay before retry number `retry` (1-based).
pub fn backoff_bound(base: Duration, retry: u32) -> Duration {
    const CAP: Duration = Duration::from_secs(60);
    let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
    base.saturating_mul(factor).min(CAP)
}

/// Full jitter: uniform in `[0, backoff_bound(base, retry)]`.
pub fn backoff_delay(base: Duration, retry: u32, rng: &mut impl Rng) -> Duration {
    let bound = backoff_bound(base, retry);
    if bound.is_zero() {
        return bound;
    }
    Duration::from_secs_f64(rng.random_range(0.0..=bound.as_secs_f64()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientCounters {
    pub calls: u64,
    pub network_attempts: u64,
    pub retries: u64,
    pub cache_hits: u64,
    pub cache_corrupt: u64,
}

pub struct LlmClient {
    endpoint: LlmEndpoint,
    transport: Arc<dyn Transport>,
    in_flight: Semaphore,
    limiter: Option<RateLimiter>,
    cache: Option<ResponseCache>,
    calls: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
}

impl LlmClient {
    pub fn new(endpoint: LlmEndpoint, transport: Arc<dyn Transport>) -> Result<Self, LlmError> {
        endpoint.validate("endpoint").map_err(LlmError::Setup)?;
        let limiter = endpoint
            .requests_per_minute
            .map(|rpm| RateLimiter::new(rpm as usize, Duration::from_secs(60)));
        Ok(Self {
            in_flight: Semaphore::new(endpoint.max_in_flight),
            endpoint,
            transport,
            limiter,
            cache: None,
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        })
    }

    /// HTTP client, or the scripted mock when `mock_script` is set.
    pub fn from_endpoint(endpoint: LlmEndpoint) -> Result<Self, LlmError> {
        let transport: Arc<dyn Transport> = match &endpoint.mock_script {
            Some(path) => Arc::new(
                ScriptedMock::from_file(path).map_err(|e| LlmError::Setup(e.to_string()))?,
            ),
            None => Arc::new(HttpTransport::new(&endpoint)?),
        };
        Self::new(endpoint, transport)
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache = Some(ResponseCache::new(dir));
        self
    }

    pub fn with_rate_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn endpoint(&self) -> &LlmEndpoint {
        &self.endpoint
    }

    pub fn model(&self) -> &str {
        &self.endpoint.model
    }

    pub fn counters(&self) -> ClientCounters {
        let (hits, corrupt) = self
            .cache
            .as_ref()
            .map(|c| (c.hits(), c.corrupt()))
            .unwrap_or_default();
        ClientCounters {
            calls: self.calls.load(Ordering::Relaxed),
            network_attempts: self.attempts.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            cache_hits: hits,
            cache_corrupt: corrupt,
        }
    }

    pub fn complete(&self, messages: &[Message]) -> Result<ChatExchange, LlmError> {
        self.complete_with(messages, self.cache.as_ref())
    }

    fn complete_with(
        &self,
        messages: &[Message],
        cache: Option<&ResponseCache>,
    ) -> Result<ChatExchange, LlmError> {
        if !messages.iter().any(|m| m.role == Role::User) {
            return Err(LlmError::InvalidRequest("no user message".into()));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = cache.map(|_| cache_key(&self.endpoint.model, self.endpoint.temperature, messages));
        if let (Some(cache), Some(key)) = (cache, &key) {
            if let Some(reply) = cache.get(key) {
                return Ok(ChatExchange {
                    messages: messages.to_vec(),
                    response_text: reply.text,
                    usage: reply.usage,
                    latency_ms: 0,
                    attempts: 0,
                });
            }
        }
        let exchange = self.send_with_retries(messages)?;
        if let (Some(cache), Some(key)) = (cache, &key) {
            let reply = Reply {
                text: exchange.response_text.clone(),
                usage: exchange.usage,
            };
            if let Err(e) = cache.put(key, &reply) {
                log::warn!("response cache write failed: {e}");
            }
        }
        Ok(exchange)
    }

    fn send_with_retries(&self, messages: &[Message]) -> Result<ChatExchange, LlmError> {
        let request = ChatRequest {
            model: &self.endpoint.model,
            messages,
            temperature: self.endpoint.temperature,
            max_tokens: self.endpoint.max_tokens,
        };
        let base = Duration::from_millis(self.endpoint.backoff_base_ms);
        let started = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let result = {
                let _permit = self.in_flight.acquire();
                if let Some(l) = &self.limiter {
                    l.acquire();
                }
                self.transport.send(&request)
            };
            match result {
                Ok(reply) => {
                    return Ok(ChatExchange {
                        messages: messages.to_vec(),
                        response_text: reply.text,
                        usage: reply.usage,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts,
                    })
                }
                Err(e) if e.is_retryable() => {
                    if attempts > self.endpoint.max_retries {
                        return Err(LlmError::Exhausted {
                            model: self.endpoint.model.clone(),
                            attempts,
                            last: e.to_string(),
                        });
                    }
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    let delay = backoff_delay(base, attempts, &mut rand::rng());
                    log::debug!("{}: {e}; retrying in {delay:?}", self.endpoint.model);
                    std::thread::sleep(delay);
                }
                Err(TransportError::Status { code, body }) => {
                    return Err(LlmError::Permanent {
                        model: self.endpoint.model.clone(),
                        status: code,
                        body,
                    })
                }
                Err(e) => {
                    return Err(LlmError::Malformed {
                        model: self.endpoint.model.clone(),
                        detail: e.to_string(),
                    })
                }
            }
        }
    }
}

/// One completion through an on-disk cache rooted at `cache_dir`.
pub fn cached_complete(
    client: &LlmClient,
    messages: &[Message],
    cache_dir: &Path,
) -> Result<ChatExchange, LlmError> {
    let cache = ResponseCache::new(cache_dir);
    client.complete_with(messages, Some(&cache))
}
