//! Chat-completion gateway.
//!
//! Every model call in the pipeline goes through [`Gateway::complete`],
//! which adds request validation, a shared sliding-window rate limit,
//! bounded retries with exponential backoff, and call logging on top of a
//! [`ChatBackend`]. Two backends exist: [`remote::RemoteBackend`] for a
//! chat-completions HTTP endpoint and [`mock::MockBackend`] which replays a
//! script keyed on request tags.

pub mod json;
pub mod limiter;
pub mod mock;
pub mod remote;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use json::{extract_json_array, extract_json_object, JsonExtractError};
pub use limiter::{Clock, RateLimiter, SystemClock, VirtualClock};

pub const DEFAULT_CREDENTIAL_ENV: &str = "CRAQAN_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

/// Caller-supplied metadata. Not sent to remote backends; the mock
/// dispatches on it and the call log records it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTags {
    pub persona: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    /// What the call is about, normally a section id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl RequestTags {
    pub fn new(persona: impl Into<String>) -> Self {
        Self { persona: persona.into(), ..Default::default() }
    }

    pub fn iteration(mut self, iteration: u32) -> Self {
        self.iteration = Some(iteration);
        self
    }

    pub fn subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub model_name: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    pub tags: RequestTags,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Short stable digest of the request, used to correlate log lines.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend_id: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub attempt_count: u32,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Timeouts, 5xx, rate-limit responses: worth retrying.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend rejected request: {0}")]
    Fatal(String),
    #[error("no mock rule matches persona {persona:?} iteration {iteration:?}")]
    MockMiss { persona: String, iteration: Option<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("no mock rule matches persona {persona:?} iteration {iteration:?}")]
    MockMiss { persona: String, iteration: Option<u32> },
}

/// One transport to a model.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Performs a single attempt. `attempt` starts at 1.
    fn send(&self, request: &ChatRequest, attempt: u32) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

/// Deserializable backend settings. Credentials are never stored here,
/// only the name of the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub credential_source: String,
    pub script_path: Option<PathBuf>,
    pub retry_limit: u32,
    pub requests_per_minute: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
    /// Extra random delay as a fraction of the computed backoff.
    pub backoff_jitter: f64,
    pub timeout_secs: u64,
    pub max_output_tokens: Option<u32>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: None,
            credential_source: DEFAULT_CREDENTIAL_ENV.to_string(),
            script_path: None,
            retry_limit: 3,
            requests_per_minute: 500,
            backoff_base_ms: 1000,
            backoff_factor: 2.0,
            backoff_jitter: 0.1,
            timeout_secs: 120,
            max_output_tokens: None,
        }
    }
}

impl BackendConfig {
    pub fn mock(script_path: impl Into<PathBuf>) -> Self {
        Self { kind: BackendKind::Mock, script_path: Some(script_path.into()), ..Self::default() }
    }

    pub fn remote(endpoint_url: impl Into<String>) -> Self {
        Self { kind: BackendKind::Remote, endpoint_url: Some(endpoint_url.into()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.requests_per_minute == 0 {
            return Err(GatewayError::Config("requests_per_minute must be positive".into()));
        }
        if self.backoff_factor.is_nan() || self.backoff_factor < 1.0 || self.backoff_jitter.is_nan() || self.backoff_jitter < 0.0 {
            return Err(GatewayError::Config("backoff factor must be >= 1 and jitter >= 0".into()));
        }
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    return Err(GatewayError::Config("remote backend requires endpoint_url".into()));
                }
                if self.credential_source.is_empty() {
                    return Err(GatewayError::Config(
                        "remote backend requires credential_source".into(),
                    ));
                }
            }
            BackendKind::Mock => {
                if self.script_path.is_none() {
                    return Err(GatewayError::Config("mock backend requires script_path".into()));
                }
            }
        }
        Ok(())
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retry_limit: self.retry_limit,
            base: Duration::from_millis(self.backoff_base_ms),
            factor: self.backoff_factor,
            jitter: self.backoff_jitter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retry_limit: u32,
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        BackendConfig::default().retry_policy()
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based), without jitter.
    pub fn delay(&self, retry: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(retry.saturating_sub(1) as i32))
    }
}

/// Rate-limited, retrying front for a [`ChatBackend`]. Cheap to share
/// behind an `Arc`; `complete` may be called from many threads.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    policy: RetryPolicy,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    max_output_tokens: Option<u32>,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, policy: RetryPolicy, requests_per_minute: u32) -> Self {
        Self {
            backend,
            policy,
            limiter: RateLimiter::new(requests_per_minute),
            clock: Arc::new(SystemClock::default()),
            max_output_tokens: None,
            calls: AtomicU64::new(0),
        }
    }

    /// Builds the backend named by `config`. Missing credentials and
    /// unreadable mock scripts fail here rather than on first use.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn ChatBackend> = match config.kind {
            BackendKind::Remote => Arc::new(remote::RemoteBackend::from_config(config)?),
            BackendKind::Mock => {
                let path = config.script_path.as_ref().expect("validated");
                Arc::new(mock::MockBackend::from_script(path).map_err(|e| {
                    GatewayError::Config(format!("mock script {}: {e}", path.display()))
                })?)
            }
        };
        let mut gateway = Self::new(backend, config.retry_policy(), config.requests_per_minute);
        gateway.max_output_tokens = config.max_output_tokens;
        Ok(gateway)
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Number of backend attempts made so far, retries included.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let owned;
        let request = if request.max_output_tokens.is_none() && self.max_output_tokens.is_some() {
            owned = ChatRequest { max_output_tokens: self.max_output_tokens, ..request.clone() };
            &owned
        } else {
            request
        };
        let digest = request.digest();
        let max_attempts = self.policy.retry_limit + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.acquire(self.clock.as_ref());
            self.calls.fetch_add(1, Ordering::Relaxed);
            let started = self.clock.now();
            let result = self.backend.send(request, attempt);
            let latency = self.clock.now().saturating_sub(started);
            match result {
                Ok(content) => {
                    tracing::debug!(
                        request = %digest,
                        persona = %request.tags.persona,
                        iteration = ?request.tags.iteration,
                        attempt,
                        latency_ms = latency.as_millis() as u64,
                        "model call ok"
                    );
                    return Ok(ChatResponse {
                        content,
                        backend_id: self.backend.id().to_string(),
                        latency,
                        attempt_count: attempt,
                    });
                }
                Err(BackendError::Transient(msg)) => {
                    tracing::warn!(request = %digest, attempt, "transient failure: {msg}");
                    if attempt >= max_attempts {
                        return Err(GatewayError::BackendUnavailable {
                            attempts: attempt,
                            last_error: msg,
                        });
                    }
                    self.clock.sleep(self.backoff(attempt));
                }
                Err(BackendError::Fatal(msg)) => {
                    tracing::warn!(request = %digest, attempt, "rejected: {msg}");
                    return Err(GatewayError::Rejected(msg));
                }
                Err(BackendError::MockMiss { persona, iteration }) => {
                    return Err(GatewayError::MockMiss { persona, iteration });
                }
            }
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let delay = self.policy.delay(retry);
        if self.policy.jitter > 0.0 {
            delay.mul_f64(1.0 + self.policy.jitter * rand::rng().random::<f64>())
        } else {
            delay
        }
    }
}
