//! OpenAI-compatible chat-completions client.
//!
//! Requests are plain JSON POSTs authenticated with a bearer token. The HTTP
//! stack (connection pool, TLS configuration, anything that reads kernel
//! entropy) is built on the first [`OpenAiBackend::complete`] call and never
//! before, so a process that loads this code but never asks for help makes no
//! network-related system calls.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::chat::ChatMessage;
use crate::config::{Config, Pricing};

/// Path appended to endpoints given without one.
pub const DEFAULT_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, temperature: f64, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            temperature,
            messages,
        }
    }

    pub fn from_config(config: &Config, messages: Vec<ChatMessage>) -> Self {
        Self::new(config.model.clone(), config.temperature, messages)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

impl Usage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
            total_tokens: prompt_tokens + completion_tokens,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.prompt_tokens.checked_add(self.completion_tokens) == Some(self.total_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub id: String,
    pub model: String,
    /// Message content of the first choice.
    pub content: String,
    pub finish_reason: String,
    pub usage: Usage,
}

/// Running token totals for a session.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UsageLedger {
    pub total: Usage,
    pub pricing: Pricing,
}

impl UsageLedger {
    pub fn new(pricing: Pricing) -> Self {
        Self {
            total: Usage::default(),
            pricing,
        }
    }

    pub fn record(&mut self, usage: &Usage) {
        self.total.prompt_tokens += usage.prompt_tokens;
        self.total.completion_tokens += usage.completion_tokens;
        self.total.total_tokens += usage.total_tokens;
    }

    pub fn estimate_cost(&self) -> f64 {
        estimate_cost(self)
    }
}

pub fn estimate_cost(ledger: &UsageLedger) -> f64 {
    ledger.total.prompt_tokens as f64 * ledger.pricing.prompt_per_1k / 1000.0
        + ledger.total.completion_tokens as f64 * ledger.pricing.completion_per_1k / 1000.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ErrorKind {
    Network,
    Timeout,
    HttpStatus(u16),
    /// The server answered with an `{"error": {...}}` envelope.
    ApiError,
    MalformedResponse,
    MissingApiKey,
    InvalidRequest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub kind: ErrorKind,
    /// For [`ErrorKind::ApiError`], the server's message verbatim.
    pub detail: String,
}

impl BackendError {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    fn malformed(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::MalformedResponse, detail)
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ErrorKind::HttpStatus(code) if self.detail.is_empty() => {
                write!(f, "http_status {code}")
            }
            ErrorKind::HttpStatus(code) => write!(f, "http_status {code}: {}", self.detail),
            ErrorKind::Network => write!(f, "network: {}", self.detail),
            ErrorKind::Timeout => write!(f, "timeout: {}", self.detail),
            ErrorKind::ApiError => write!(f, "api_error: {}", self.detail),
            ErrorKind::MalformedResponse => write!(f, "malformed_response: {}", self.detail),
            ErrorKind::MissingApiKey => write!(f, "missing_api_key: {}", self.detail),
            ErrorKind::InvalidRequest => write!(f, "invalid_request: {}", self.detail),
        }
    }
}

impl std::error::Error for BackendError {}

pub fn serialize_request(req: &ChatRequest) -> Vec<u8> {
    serde_json::to_vec(req).expect("request serialization cannot fail")
}

#[derive(Deserialize)]
struct RawResponse {
    #[serde(default)]
    id: String,
    #[serde(default)]
    model: String,
    #[serde(default)]
    choices: Vec<RawChoice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct RawChoice {
    message: Option<RawMessage>,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct RawMessage {
    content: Option<String>,
}

/// The server's message from an `{"error": {"message": ...}}` envelope.
pub fn error_envelope_message(value: &serde_json::Value) -> Option<String> {
    let err = value.get("error")?;
    match err {
        serde_json::Value::Object(map) => Some(match map.get("message") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => err.to_string(),
        }),
        serde_json::Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

pub fn parse_response(body: &[u8]) -> Result<ChatResponse, BackendError> {
    let value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| BackendError::malformed(format!("not JSON: {e}")))?;
    if let Some(message) = error_envelope_message(&value) {
        return Err(BackendError::new(ErrorKind::ApiError, message));
    }
    let raw: RawResponse =
        serde_json::from_value(value).map_err(|e| BackendError::malformed(e.to_string()))?;
    let first = raw
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::malformed("no choices"))?;
    let content = first
        .message
        .and_then(|m| m.content)
        .ok_or_else(|| BackendError::malformed("first choice has no message content"))?;
    let usage = raw.usage.unwrap_or_default();
    if !usage.is_consistent() {
        return Err(BackendError::malformed(format!(
            "usage total {} != prompt {} + completion {}",
            usage.total_tokens, usage.prompt_tokens, usage.completion_tokens
        )));
    }
    Ok(ChatResponse {
        id: raw.id,
        model: raw.model,
        content,
        finish_reason: first.finish_reason.unwrap_or_default(),
        usage,
    })
}

/// A provider able to answer chat requests.
pub trait Backend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// Resolves the configured endpoint, appending [`DEFAULT_PATH`] when the URL
/// has no path of its own.
pub fn resolve_endpoint(endpoint: &str) -> Result<url::Url, BackendError> {
    let mut url = url::Url::parse(endpoint).map_err(|e| {
        BackendError::new(
            ErrorKind::InvalidRequest,
            format!("bad endpoint `{endpoint}`: {e}"),
        )
    })?;
    if matches!(url.path(), "" | "/") {
        url.set_path(DEFAULT_PATH);
    }
    Ok(url)
}

fn is_loopback(url: &url::Url) -> bool {
    match url.host() {
        Some(url::Host::Domain(d)) => d == "localhost",
        Some(url::Host::Ipv4(ip)) => ip.is_loopback(),
        Some(url::Host::Ipv6(ip)) => ip.is_loopback(),
        None => false,
    }
}

/// Client for OpenAI-compatible endpoints.
pub struct OpenAiBackend {
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    agent: OnceLock<Result<ureq::Agent, BackendError>>,
    init_count: AtomicUsize,
    ledger: Mutex<UsageLedger>,
}

impl OpenAiBackend {
    /// Captures settings only; no network state is created here.
    pub fn new(config: &Config) -> Self {
        Self {
            endpoint: config.endpoint_url.clone(),
            api_key: config.api_key.clone(),
            timeout: Duration::from_millis(config.timeout_ms),
            agent: OnceLock::new(),
            init_count: AtomicUsize::new(0),
            ledger: Mutex::new(UsageLedger::new(config.pricing)),
        }
    }

    /// Builds the HTTP stack on the first call; later calls return the
    /// cached outcome, including a cached failure.
    pub fn lazy_init(&self) -> Result<(), BackendError> {
        self.agent_handle().map(|_| ())
    }

    fn agent_handle(&self) -> Result<&ureq::Agent, BackendError> {
        self.agent
            .get_or_init(|| {
                self.init_count.fetch_add(1, Ordering::SeqCst);
                let url = resolve_endpoint(&self.endpoint)?;
                let mut builder = ureq::Agent::config_builder()
                    .timeout_global(Some(self.timeout))
                    .http_status_as_error(false);
                if is_loopback(&url) {
                    builder = builder.proxy(None);
                }
                Ok(ureq::Agent::new_with_config(builder.build()))
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// How many times the HTTP stack has been initialized (0 or 1).
    pub fn init_count(&self) -> usize {
        self.init_count.load(Ordering::SeqCst)
    }

    pub fn ledger(&self) -> UsageLedger {
        *self.ledger.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn post(
        &self,
        agent: &ureq::Agent,
        key: &str,
        body: &[u8],
    ) -> Result<(u16, Vec<u8>), BackendError> {
        let url = resolve_endpoint(&self.endpoint)?;
        let response = agent
            .post(url.as_str())
            .header("Authorization", format!("Bearer {key}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| self.transport_error(e))?;
        let status = response.status().as_u16();
        let body = response
            .into_body()
            .read_to_vec()
            .map_err(|e| self.transport_error(e))?;
        Ok((status, body))
    }

    fn transport_error(&self, err: ureq::Error) -> BackendError {
        let timed_out = match &err {
            ureq::Error::Timeout(_) => true,
            ureq::Error::Io(io) => matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ),
            _ => false,
        };
        if timed_out {
            BackendError::new(
                ErrorKind::Timeout,
                format!("no response within {} ms", self.timeout.as_millis()),
            )
        } else {
            BackendError::new(ErrorKind::Network, err.to_string())
        }
    }
}

impl Backend for OpenAiBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| BackendError::new(ErrorKind::MissingApiKey, "no API key configured"))?;
        if req.messages.is_empty() {
            return Err(BackendError::new(ErrorKind::InvalidRequest, "no messages"));
        }
        let agent = self.agent_handle()?;
        let (status, body) = self.post(agent, key, &serialize_request(req))?;
        if status != 200 {
            let detail = serde_json::from_slice(&body)
                .ok()
                .and_then(|v| error_envelope_message(&v))
                .unwrap_or_default();
            return Err(BackendError::new(ErrorKind::HttpStatus(status), detail));
        }
        let response = parse_response(&body)?;
        self.ledger
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .record(&response.usage);
        Ok(response)
    }
}
