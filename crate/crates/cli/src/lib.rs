//! Library side of `nl2cmd`: one natural-language request in, one command out.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aicli_core::backend::{Backend, ChatRequest, ErrorKind, OpenAiBackend, UsageLedger};
use aicli_core::chat::{self, PromptContext};
use aicli_core::config::{
    self, check_endpoint, check_temperature, Config, Environment, API_KEY_ENV, CONFIG_ENV,
};

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const MISSING_KEY: i32 = 3;
    pub const BACKEND: i32 = 4;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliInvocation {
    pub program: String,
    pub prompt: String,
    pub context: Vec<String>,
    pub show_cost: bool,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub config: Option<PathBuf>,
}

impl CliInvocation {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            program: "bash".to_owned(),
            prompt: prompt.into(),
            context: Vec::new(),
            show_cost: false,
            endpoint: None,
            model: None,
            temperature: None,
            config: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOutput {
    pub status: i32,
    pub stdout: String,
    pub stderr: String,
}

impl RunOutput {
    fn fail(status: i32, message: impl std::fmt::Display) -> Self {
        Self {
            status,
            stdout: String::new(),
            stderr: format!("nl2cmd: {message}\n"),
        }
    }
}

/// `env` with the extra configuration file replaced.
struct ConfigOverride<'a> {
    base: &'a dyn Environment,
    path: String,
}

impl Environment for ConfigOverride<'_> {
    fn var(&self, name: &str) -> Option<String> {
        if name == CONFIG_ENV {
            Some(self.path.clone())
        } else {
            self.base.var(name)
        }
    }
}

/// Loads configuration and applies the invocation's overrides.
pub fn effective_config(
    inv: &CliInvocation,
    env: &dyn Environment,
    cwd: &Path,
) -> Result<Config, String> {
    let loaded = match &inv.config {
        Some(path) => {
            if !path.is_file() {
                return Err(format!("config file {} not found", path.display()));
            }
            let env = ConfigOverride {
                base: env,
                path: path.display().to_string(),
            };
            config::load(&env, cwd)
        }
        None => config::load(env, cwd),
    };
    let mut config = loaded.map_err(|e| e.to_string())?.config;
    if let Some(model) = &inv.model {
        if model.trim().is_empty() {
            return Err("--model must not be empty".into());
        }
        config.model = model.clone();
    }
    if let Some(t) = inv.temperature {
        check_temperature(t).map_err(|e| format!("--temperature: {e}"))?;
        config.temperature = t;
    }
    if let Some(endpoint) = &inv.endpoint {
        check_endpoint(endpoint).map_err(|e| format!("--endpoint: {e}"))?;
        config.endpoint_url = endpoint.clone();
    }
    Ok(config)
}

/// The request `inv` would send under `config`.
pub fn build_request(inv: &CliInvocation, config: &Config) -> Result<ChatRequest, String> {
    let ctx = PromptContext {
        profile: config.profile_for(&inv.program),
        history: chat::harvest_history(&inv.context, config.history_context),
        live_prompt: inv.prompt.trim().to_owned(),
    };
    let messages = chat::assemble(&ctx, config.history_context).map_err(|e| e.to_string())?;
    Ok(ChatRequest::from_config(config, messages))
}

pub fn run(inv: &CliInvocation, env: &dyn Environment, cwd: &Path) -> RunOutput {
    let config = match effective_config(inv, env, cwd) {
        Ok(c) => c,
        Err(e) => return RunOutput::fail(exit::CONFIG, e),
    };
    let backend = OpenAiBackend::new(&config);
    run_with(inv, &config, &backend)
}

/// [`run`] with configuration already loaded and a given backend.
pub fn run_with(inv: &CliInvocation, config: &Config, backend: &dyn Backend) -> RunOutput {
    if inv.prompt.trim().is_empty() {
        return RunOutput::fail(
            exit::CONFIG,
            "empty prompt\nusage: nl2cmd [OPTIONS] <PROMPT>...",
        );
    }
    if config.api_key.is_none() {
        return RunOutput::fail(
            exit::MISSING_KEY,
            format!("no API key: set {API_KEY_ENV} or `api_key` in the [auth] section"),
        );
    }
    let request = match build_request(inv, config) {
        Ok(r) => r,
        Err(e) => return RunOutput::fail(exit::CONFIG, e),
    };
    let response = match backend.complete(&request) {
        Ok(r) => r,
        Err(e) if e.kind == ErrorKind::MissingApiKey => {
            return RunOutput::fail(exit::MISSING_KEY, e)
        }
        Err(e) => return RunOutput::fail(exit::BACKEND, e),
    };
    let mut out = RunOutput {
        status: exit::SUCCESS,
        stdout: format!("{}\n", response.content.trim_end_matches(['\r', '\n'])),
        stderr: String::new(),
    };
    if inv.show_cost {
        let u = response.usage;
        let mut ledger = UsageLedger::new(config.pricing);
        ledger.record(&u);
        let cost = ledger.estimate_cost();
        let _ = writeln!(
            out.stderr,
            "usage: {} prompt + {} completion = {} tokens, estimated cost ${cost:.7}",
            u.prompt_tokens, u.completion_tokens, u.total_tokens
        );
    }
    out
}
