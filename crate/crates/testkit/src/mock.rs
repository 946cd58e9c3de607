//! A scripted, OpenAI-compatible chat-completions server on loopback.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime};

use aicli_core::backend::{ChatRequest, Usage};
use aicli_core::chat::Role;
use aicli_core::ini;
use serde_json::json;

/// Path the mock answers on; any path ending in `/chat/completions` is accepted.
pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";
/// Model name reported in every response.
pub const MOCK_MODEL: &str = "gpt-3.5-turbo-0613";
/// `created` timestamp reported in every response.
pub const MOCK_CREATED: u64 = 1691681377;
/// Reply of the implicit catch-all rule.
pub const DEFAULT_REPLY: &str = "true";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    /// The last user message contains this text.
    Contains(String),
    /// The last user message is exactly this text.
    Exact(String),
    Any,
}

impl Pattern {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            Pattern::Contains(s) => text.contains(s.as_str()),
            Pattern::Exact(s) => text == s,
            Pattern::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    pub pattern: Pattern,
    pub reply: String,
    /// Reported usage; estimated from the request and reply when `None`.
    pub usage: Option<Usage>,
    pub status: u16,
    pub delay_ms: u64,
    /// Sent verbatim instead of a generated body.
    pub body_override: Option<Vec<u8>>,
}

impl MockRule {
    pub fn new(pattern: Pattern, reply: impl Into<String>) -> Self {
        Self {
            pattern,
            reply: reply.into(),
            usage: None,
            status: 200,
            delay_ms: 0,
            body_override: None,
        }
    }

    pub fn contains(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        Self::new(Pattern::Contains(needle.into()), reply)
    }

    pub fn exact(text: impl Into<String>, reply: impl Into<String>) -> Self {
        Self::new(Pattern::Exact(text.into()), reply)
    }

    pub fn catch_all(reply: impl Into<String>) -> Self {
        Self::new(Pattern::Any, reply)
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.usage = Some(Usage::new(prompt_tokens, completion_tokens));
        self
    }

    pub fn with_status(mut self, status: u16) -> Self {
        self.status = status;
        self
    }

    pub fn with_delay_ms(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> Self {
        self.body_override = Some(body.into());
        self
    }

    /// Responds with an OpenAI-style error envelope.
    pub fn with_error(self, status: u16, message: &str) -> Self {
        let body = json!({"error": {"message": message, "type": "mock_error", "code": null}});
        self.with_status(status).with_body(body.to_string())
    }
}

/// The rule list actually served: `rules` followed by a catch-all unless
/// one is already present.
pub fn effective_rules(mut rules: Vec<MockRule>) -> Vec<MockRule> {
    if !rules.iter().any(|r| r.pattern == Pattern::Any) {
        rules.push(MockRule::catch_all(DEFAULT_REPLY));
    }
    rules
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("cannot bind mock server: {0}")]
    Bind(String),
    #[error("rule file line {line}: {message}")]
    Rules { line: usize, message: String },
}

/// One request the mock received.
#[derive(Debug, Clone)]
pub struct RecordedExchange {
    pub path: String,
    pub raw_body: Vec<u8>,
    /// `None` when the body was not a valid request.
    pub request: Option<ChatRequest>,
    pub received_at: SystemTime,
    /// Index into the effective rule list.
    pub rule: usize,
    pub authorization: Option<String>,
}

/// Shared view of a server's recordings.
#[derive(Debug, Clone, Default)]
pub struct Recorder(Arc<Mutex<Vec<RecordedExchange>>>);

impl Recorder {
    pub fn exchanges(&self) -> Vec<RecordedExchange> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn push(&self, exchange: RecordedExchange) {
        self.0
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(exchange);
    }
}

/// A running mock server; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    recorder: Recorder,
    rules: Vec<MockRule>,
    thread: Option<JoinHandle<()>>,
}

/// Starts a mock on an ephemeral loopback port.
pub fn mock_serve(rules: Vec<MockRule>) -> Result<MockServer, MockError> {
    let rules = effective_rules(rules);
    let server = Arc::new(
        tiny_http::Server::http("127.0.0.1:0").map_err(|e| MockError::Bind(e.to_string()))?,
    );
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| MockError::Bind("not an IP listener".into()))?;
    let recorder = Recorder::default();
    let thread = {
        let server = Arc::clone(&server);
        let recorder = recorder.clone();
        let rules = rules.clone();
        std::thread::Builder::new()
            .name("aicli-mock".into())
            .spawn(move || {
                let mut serial = 0u64;
                for request in server.incoming_requests() {
                    serial += 1;
                    serve_one(request, &rules, &recorder, serial);
                }
            })
            .map_err(|e| MockError::Bind(e.to_string()))?
    };
    Ok(MockServer {
        addr,
        server,
        recorder,
        rules,
        thread: Some(thread),
    })
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Full chat-completions URL of this server.
    pub fn endpoint(&self) -> String {
        format!("http://{}{COMPLETIONS_PATH}", self.addr)
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    pub fn recorder(&self) -> Recorder {
        self.recorder.clone()
    }

    pub fn recordings(&self) -> Vec<RecordedExchange> {
        self.recorder.exchanges()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Content of the last user message, or "" if there is none.
pub fn last_user_message(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.content.as_str())
}

/// Rough token count: one token per four bytes, at least one.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4).max(1)
}

/// The success body for `rule`, shaped like an OpenAI chat completion.
pub fn response_body(rule: &MockRule, request: Option<&ChatRequest>, serial: u64) -> Vec<u8> {
    let usage = rule.usage.unwrap_or_else(|| {
        let prompt: u64 = request.map_or(1, |r| {
            r.messages.iter().map(|m| estimate_tokens(&m.content)).sum()
        });
        Usage::new(prompt, estimate_tokens(&rule.reply))
    });
    json!({
        "id": format!("chatcmpl-mock{serial:08}"),
        "object": "chat.completion",
        "created": MOCK_CREATED,
        "model": MOCK_MODEL,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": rule.reply},
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": usage.prompt_tokens,
            "completion_tokens": usage.completion_tokens,
            "total_tokens": usage.total_tokens
        }
    })
    .to_string()
    .into_bytes()
}

fn serve_one(
    mut request: tiny_http::Request,
    rules: &[MockRule],
    recorder: &Recorder,
    serial: u64,
) {
    let path = request
        .url()
        .split('?')
        .next()
        .unwrap_or_default()
        .to_owned();
    if *request.method() != tiny_http::Method::Post || !path.ends_with("/chat/completions") {
        let _ = request.respond(tiny_http::Response::empty(404));
        return;
    }
    let mut raw_body = Vec::new();
    if request.as_reader().read_to_end(&mut raw_body).is_err() {
        let _ = request.respond(tiny_http::Response::empty(400));
        return;
    }
    let authorization = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.to_string());
    let parsed: Option<ChatRequest> = serde_json::from_slice(&raw_body).ok();
    let last = parsed.as_ref().map_or("", last_user_message);
    let index = rules
        .iter()
        .position(|r| r.pattern.matches(last))
        .unwrap_or(rules.len() - 1);
    let rule = &rules[index];

    let body = match (&rule.body_override, rule.status) {
        (Some(body), _) => body.clone(),
        (None, 200) => response_body(rule, parsed.as_ref(), serial),
        (None, _) => Vec::new(),
    };
    recorder.push(RecordedExchange {
        path,
        raw_body,
        request: parsed,
        received_at: SystemTime::now(),
        rule: index,
        authorization,
    });
    if rule.delay_ms > 0 {
        std::thread::sleep(Duration::from_millis(rule.delay_ms));
    }
    let header =
        tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_data(body)
        .with_status_code(rule.status)
        .with_header(header);
    let _ = request.respond(response);
}

/// Reads rules from the configuration INI dialect, one section per rule in
/// file order. Keys: `match` (substring), `exact`, `reply`, `prompt_tokens`,
/// `completion_tokens`, `status`, `delay_ms`, `body`. A section with
/// neither `match` nor `exact` is a catch-all.
pub fn rules_from_ini(text: &str) -> Result<Vec<MockRule>, MockError> {
    let doc = ini::parse(text).map_err(|e| MockError::Rules {
        line: e.line,
        message: e.message,
    })?;
    let mut rules = Vec::new();
    for section in &doc.sections {
        let err = |message: String| MockError::Rules {
            line: section.line,
            message: format!("[{}]: {message}", section.name),
        };
        let number = |key: &str| -> Result<Option<u64>, MockError> {
            section
                .get(key)
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| err(format!("{key} must be a non-negative integer")))
                })
                .transpose()
        };
        let pattern = match (section.get("match"), section.get("exact")) {
            (Some(_), Some(_)) => return Err(err("use either `match` or `exact`".into())),
            (Some(m), None) => Pattern::Contains(m.to_owned()),
            (None, Some(e)) => Pattern::Exact(e.to_owned()),
            (None, None) => Pattern::Any,
        };
        let mut rule = MockRule::new(pattern, section.get("reply").unwrap_or(DEFAULT_REPLY));
        match (number("prompt_tokens")?, number("completion_tokens")?) {
            (None, None) => {}
            (p, c) => rule = rule.with_usage(p.unwrap_or(0), c.unwrap_or(0)),
        }
        if let Some(status) = number("status")? {
            let status = u16::try_from(status)
                .ok()
                .filter(|s| (100..=599).contains(s))
                .ok_or_else(|| err("status must be 100-599".into()))?;
            rule = rule.with_status(status);
        }
        if let Some(delay) = number("delay_ms")? {
            rule = rule.with_delay_ms(delay);
        }
        if let Some(body) = section.get("body") {
            rule = rule.with_body(body.as_bytes().to_vec());
        }
        for entry in &section.entries {
            const KNOWN: [&str; 8] = [
                "match",
                "exact",
                "reply",
                "prompt_tokens",
                "completion_tokens",
                "status",
                "delay_ms",
                "body",
            ];
            if !KNOWN.contains(&entry.key.as_str()) {
                return Err(MockError::Rules {
                    line: entry.line,
                    message: format!("unknown key `{}`", entry.key),
                });
            }
        }
        rules.push(rule);
    }
    Ok(rules)
}
