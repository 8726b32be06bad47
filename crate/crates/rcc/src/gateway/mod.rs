//! Language-model access with templated prompts, bounded concurrency, and
//! retry with exponential backoff.
//!
//! Everything above this module speaks one vocabulary: render a named
//! template with variables, get a completion string back. Behind that sit
//! two backends — an HTTP chat-completion client and a deterministic
//! scripted mock — chosen by configuration, never by the call site.
//!
//! Failure handling draws one line: *transient* failures (connection
//! errors, HTTP 429 and 5xx) are retried with exponential backoff
//! (`base · 2^attempt` plus optional jitter); *permanent* failures (other
//! 4xx, malformed responses) are surfaced immediately. Config problems —
//! unknown template, unbound variable — are never retried, since no number
//! of attempts fixes them.
//!
//! In-flight requests are capped by a fair gate: callers are admitted in
//! arrival order, so a burst of workers cannot starve an early caller.

pub mod mock;
mod net;
pub mod template;

pub use mock::{MockBackend, MockBehavior};
pub use net::HttpBackend;
pub use template::{RenderedPrompt, TemplateStore, BUILTIN_TEMPLATE_IDS};

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default environment variable consulted for the API credential.
pub const DEFAULT_CREDENTIAL_ENV: &str = "RCC_LLM_API_KEY";

/// A templated completion request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Which prompt template to render.
    pub template_id: String,
    /// Values for the template's `{{variables}}`.
    #[serde(default)]
    pub vars: BTreeMap<String, String>,
    /// Sampling temperature; generation wants variety, judging wants none.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Completion length cap.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    256
}

impl CompletionRequest {
    pub fn new(template_id: &str) -> Self {
        CompletionRequest {
            template_id: template_id.to_string(),
            vars: BTreeMap::new(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
        }
    }

    pub fn var(mut self, key: &str, value: &str) -> Self {
        self.vars.insert(key.to_string(), value.to_string());
        self
    }

    /// Zero-temperature variant for judging calls.
    pub fn deterministic(mut self) -> Self {
        self.temperature = 0.0;
        self
    }
}

/// Which implementation answers completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-style chat-completion endpoint over HTTP.
    HttpChat,
    /// Scripted offline replies.
    Mock,
}

/// Connection, retry, and concurrency settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full URL of the chat-completions endpoint.
    #[serde(default)]
    pub endpoint: String,
    /// Model identifier sent in the request body.
    #[serde(default)]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Retries after the first attempt, for transient failures only.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Simultaneous requests allowed through the gate.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// First backoff delay; doubles per retry.
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    /// Add up to one base-delay of random jitter to each backoff.
    #[serde(default = "default_true")]
    pub backoff_jitter: bool,
    /// Script for the mock backend.
    #[serde(default = "default_mock_script")]
    pub mock_script: Vec<MockBehavior>,
}

fn default_mock_script() -> Vec<MockBehavior> {
    vec![MockBehavior::Auto]
}

fn default_credential_env() -> String {
    DEFAULT_CREDENTIAL_ENV.to_string()
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    4
}

fn default_backoff_base_ms() -> u64 {
    1000
}

fn default_true() -> bool {
    true
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model: String::new(),
            credential_env: default_credential_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_jitter: true,
            mock_script: default_mock_script(),
        }
    }
}

/// How a single backend attempt failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: connection trouble, 429, 5xx.
    Transient(String),
    /// Retrying cannot help: other 4xx, malformed reply.
    Permanent(String),
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transient(msg) => write!(f, "transient: {msg}"),
            BackendError::Permanent(msg) => write!(f, "permanent: {msg}"),
        }
    }
}

/// A completion provider. Implementations must be callable from worker
/// threads concurrently.
pub trait Backend: Send + Sync {
    fn execute(
        &self,
        prompt: &RenderedPrompt,
        request: &CompletionRequest,
    ) -> std::result::Result<String, BackendError>;
}

// ─────────────────────────────────────────────────────────────────────────
// Fair concurrency gate
// ─────────────────────────────────────────────────────────────────────────

struct GateState {
    available: usize,
    next_ticket: u64,
    now_serving: u64,
}

/// Counting semaphore that admits waiters strictly in arrival order.
struct FairGate {
    state: Mutex<GateState>,
    condvar: Condvar,
}

struct GatePermit<'a>(&'a FairGate);

impl FairGate {
    fn new(capacity: usize) -> Self {
        FairGate {
            state: Mutex::new(GateState {
                available: capacity,
                next_ticket: 0,
                now_serving: 0,
            }),
            condvar: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut state = self.state.lock().expect("gate poisoned");
        let ticket = state.next_ticket;
        state.next_ticket += 1;
        // Wait for both our turn and a free slot; earlier tickets always
        // clear the turnstile first, so arrival order is admission order.
        while state.now_serving != ticket || state.available == 0 {
            state = self.condvar.wait(state).expect("gate poisoned");
        }
        state.now_serving += 1;
        state.available -= 1;
        self.condvar.notify_all();
        GatePermit(self)
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut state = self.0.state.lock().expect("gate poisoned");
        state.available += 1;
        drop(state);
        self.0.condvar.notify_all();
    }
}

// ─────────────────────────────────────────────────────────────────────────
// Client
// ─────────────────────────────────────────────────────────────────────────

/// Shared completion client: templates, backend, retry policy, gate.
#[derive(Clone)]
pub struct Client {
    config: Arc<BackendConfig>,
    templates: Arc<TemplateStore>,
    backend: Arc<dyn Backend>,
    gate: Arc<FairGate>,
}

impl Client {
    pub fn new(config: BackendConfig, templates: TemplateStore) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let backend: Arc<dyn Backend> = match config.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(config.mock_script.clone())?),
            BackendKind::HttpChat => Arc::new(HttpBackend::new(&config)?),
        };
        let gate = Arc::new(FairGate::new(config.max_in_flight));
        Ok(Client {
            config: Arc::new(config),
            templates: Arc::new(templates),
            backend,
            gate,
        })
    }

    /// Mock-backed client with builtin templates — the test workhorse.
    pub fn mock(script: Vec<MockBehavior>) -> Result<Self> {
        let config = BackendConfig {
            mock_script: script,
            backoff_base_ms: 1,
            backoff_jitter: false,
            ..BackendConfig::default()
        };
        Client::new(config, TemplateStore::builtin())
    }

    /// Like [`Client::mock`], but also hands back the backend so tests can
    /// inspect call counts and concurrency.
    pub fn mock_with_handle(script: Vec<MockBehavior>) -> Result<(Self, Arc<MockBackend>)> {
        let backend = Arc::new(MockBackend::new(script)?);
        let config = BackendConfig {
            backoff_base_ms: 1,
            backoff_jitter: false,
            ..BackendConfig::default()
        };
        let gate = Arc::new(FairGate::new(config.max_in_flight));
        let client = Client {
            config: Arc::new(config),
            templates: Arc::new(TemplateStore::builtin()),
            backend: backend.clone(),
            gate,
        };
        Ok((client, backend))
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    /// Render the request's template and execute it, retrying transient
    /// failures with exponential backoff.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String> {
        // Template problems are configuration errors; they fail before any
        // backend attempt and are never retried.
        let prompt = self.templates.render(&request.template_id, &request.vars)?;
        let _permit = self.gate.acquire();

        let mut last_failure = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff_delay(attempt - 1));
            }
            match self.backend.execute(&prompt, request) {
                Ok(reply) => return Ok(reply),
                Err(BackendError::Permanent(msg)) => {
                    return Err(Error::Backend(format!(
                        "template '{}': {msg}",
                        request.template_id
                    )));
                }
                Err(BackendError::Transient(msg)) => last_failure = msg,
            }
        }
        Err(Error::Backend(format!(
            "template '{}': giving up after {} attempts; last failure: {last_failure}",
            request.template_id,
            self.config.max_retries + 1,
        )))
    }

    fn backoff_delay(&self, exhausted_attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms.max(1);
        let scaled = base.saturating_mul(1u64 << exhausted_attempt.min(16));
        let jitter = if self.config.backoff_jitter {
            // Cheap decorrelation; cryptographic quality is irrelevant here.
            use rand::Rng;
            rand::thread_rng().gen_range(0..=base)
        } else {
            0
        };
        Duration::from_millis(scaled.saturating_add(jitter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transient_failures_are_retried_until_success() {
        let (client, backend) = Client::mock_with_handle(vec![
            MockBehavior::Fail { status: 503 },
            MockBehavior::FailTransport,
            MockBehavior::Text { text: "third time lucky".into() },
        ])
        .unwrap();
        let req = CompletionRequest::new("judge")
            .var("reference", "a")
            .var("predicted", "b");
        assert_eq!(client.complete(&req).unwrap(), "third time lucky");
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn permanent_failures_are_not_retried() {
        let (client, backend) = Client::mock_with_handle(vec![
            MockBehavior::Fail { status: 400 },
            MockBehavior::Text { text: "never reached".into() },
        ])
        .unwrap();
        let req = CompletionRequest::new("judge")
            .var("reference", "a")
            .var("predicted", "b");
        let err = client.complete(&req).unwrap_err();
        assert!(matches!(err, Error::Backend(_)), "{err}");
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn retries_exhaust_and_report_last_failure() {
        let (client, backend) =
            Client::mock_with_handle(vec![MockBehavior::Fail { status: 503 }]).unwrap();
        let req = CompletionRequest::new("judge")
            .var("reference", "a")
            .var("predicted", "b");
        let err = client.complete(&req).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("4 attempts"), "{msg}");
        assert!(msg.contains("503"), "{msg}");
        // 1 initial + max_retries.
        assert_eq!(backend.calls(), 4);
    }

    #[test]
    fn unknown_template_fails_without_touching_backend() {
        let (client, backend) =
            Client::mock_with_handle(vec![MockBehavior::Auto]).unwrap();
        let err = client
            .complete(&CompletionRequest::new("no_such_template"))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn unbound_variable_fails_without_touching_backend() {
        let (client, backend) =
            Client::mock_with_handle(vec![MockBehavior::Auto]).unwrap();
        let err = client
            .complete(&CompletionRequest::new("judge").var("reference", "only one"))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn gate_caps_simultaneous_requests() {
        let backend = Arc::new(
            MockBackend::new(vec![MockBehavior::Delay { ms: 25 }]).unwrap(),
        );
        let config = BackendConfig {
            max_in_flight: 2,
            backoff_base_ms: 1,
            backoff_jitter: false,
            ..BackendConfig::default()
        };
        let client = Client {
            config: Arc::new(config),
            templates: Arc::new(TemplateStore::builtin()),
            backend: backend.clone(),
            gate: Arc::new(FairGate::new(2)),
        };
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let c = client.clone();
                std::thread::spawn(move || {
                    let req = CompletionRequest::new("judge")
                        .var("reference", "a b c")
                        .var("predicted", "a b c");
                    c.complete(&req).unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(backend.calls(), 6);
        assert!(
            backend.max_in_flight_seen() <= 2,
            "saw {} simultaneous requests",
            backend.max_in_flight_seen()
        );
    }

    #[test]
    fn gate_admits_waiters_in_arrival_order() {
        let gate = Arc::new(FairGate::new(1));
        let order = Arc::new(Mutex::new(Vec::new()));
        // Hold the only slot while the waiters queue up.
        let first = gate.acquire();
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let gate = gate.clone();
                let order = order.clone();
                let h = std::thread::spawn(move || {
                    let _permit = gate.acquire();
                    order.lock().unwrap().push(i);
                });
                // Stagger spawns so ticket order matches loop order.
                std::thread::sleep(Duration::from_millis(20));
                h
            })
            .collect();
        drop(first);
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(*order.lock().unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_capacity_is_a_config_error() {
        let config = BackendConfig {
            max_in_flight: 0,
            ..BackendConfig::default()
        };
        assert!(Client::new(config, TemplateStore::builtin()).is_err());
    }

    #[test]
    fn config_round_trips_through_json_with_defaults() {
        let parsed: BackendConfig = serde_json::from_str(r#"{"kind": "mock"}"#).unwrap();
        assert_eq!(parsed.kind, BackendKind::Mock);
        assert_eq!(parsed.credential_env, DEFAULT_CREDENTIAL_ENV);
        assert_eq!(parsed.max_retries, 3);
        assert_eq!(parsed.max_in_flight, 4);
        assert_eq!(parsed.backoff_base_ms, 1000);
        assert!(parsed.backoff_jitter);
    }
}
