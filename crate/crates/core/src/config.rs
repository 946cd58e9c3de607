//! Layered configuration.
//!
//! Configuration comes from several INI files (see [`crate::ini`]) read in
//! ascending precedence: the bundled defaults compiled into the library,
//! `/etc/ai-cli.conf`, `$HOME/.aicliconfig`, `./.aicliconfig`, and finally the
//! file named by `$AI_CLI_CONFIG`. Each file parses into a [`PartialConfig`]
//! holding only the keys it sets; [`merge`] overlays them last-writer-wins and
//! fills anything still missing from the documented defaults.
//!
//! Recognised sections and keys:
//!
//! | section            | keys |
//! |--------------------|------|
//! | `[general]`        | `model`, `temperature`, `endpoint`, `timeout_ms`, `history_context`, `max_exchanges`, `price_prompt_per_1k`, `price_completion_per_1k`, `debug_log` |
//! | `[binding]`        | `ai_help` |
//! | `[auth]`           | `api_key` |
//! | `[prompt-<prog>]`  | `system`, `comment`, `instructions`, `user-N`, `assistant-N` |
//!
//! Unknown sections and keys produce warnings, not errors.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::hash::BuildHasher;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ini::{self, IniEntry};
use crate::keyseq::KeySequence;

/// Environment variable naming an extra, highest-precedence configuration file.
pub const CONFIG_ENV: &str = "AI_CLI_CONFIG";
/// Environment variable consulted for the API key when no file sets one.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const SYSTEM_CONFIG_PATH: &str = "/etc/ai-cli.conf";
/// File name looked up in the home and current directories.
pub const USER_CONFIG_NAME: &str = ".aicliconfig";
pub const BUNDLED_DEFAULTS: &str = include_str!("default.conf");

pub mod defaults {
    pub const MODEL: &str = "gpt-3.5-turbo";
    pub const TEMPERATURE: f64 = 0.7;
    pub const ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
    pub const TIMEOUT_MS: u64 = 30_000;
    pub const HISTORY_CONTEXT: usize = 3;
    pub const MAX_EXCHANGES: usize = 3;
    pub const PRICE_PROMPT_PER_1K: f64 = 0.0015;
    pub const PRICE_COMPLETION_PER_1K: f64 = 0.002;
    pub const COMMENT_LEADER: &str = "#";
    pub const BINDING: &str = "ctrl-x a";
}

pub const TEMPERATURE_RANGE: std::ops::RangeInclusive<f64> = 0.0..=2.0;

/// Read access to environment variables.
pub trait Environment {
    fn var(&self, key: &str) -> Option<String>;
}

/// The environment of the running process.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProcessEnv;

impl Environment for ProcessEnv {
    fn var(&self, key: &str) -> Option<String> {
        std::env::var(key).ok()
    }
}

impl Environment for BTreeMap<String, String> {
    fn var(&self, key: &str) -> Option<String> {
        self.get(key).cloned()
    }
}

impl<S: BuildHasher> Environment for HashMap<String, String, S> {
    fn var(&self, key: &str) -> Option<String> {
        self.get(key).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceLocation {
    Bundled,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigSource {
    pub location: SourceLocation,
    /// Higher overrides lower; unique within one list.
    pub precedence: u32,
}

impl ConfigSource {
    pub fn name(&self) -> String {
        match &self.location {
            SourceLocation::Bundled => "<bundled defaults>".to_owned(),
            SourceLocation::File(p) => p.display().to_string(),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.location {
            SourceLocation::Bundled => None,
            SourceLocation::File(p) => Some(p),
        }
    }

    pub fn read(&self) -> Result<Cow<'static, str>, ConfigError> {
        match &self.location {
            SourceLocation::Bundled => Ok(Cow::Borrowed(BUNDLED_DEFAULTS)),
            SourceLocation::File(path) => {
                std::fs::read_to_string(path)
                    .map(Cow::Owned)
                    .map_err(|source| ConfigError::Io {
                        path: path.clone(),
                        source,
                    })
            }
        }
    }
}

/// Candidate configuration file locations, lowest precedence first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchPaths {
    pub system: PathBuf,
    pub home: Option<PathBuf>,
    pub cwd: PathBuf,
    pub extra: Option<PathBuf>,
}

impl SearchPaths {
    pub fn from_env(env: &dyn Environment, cwd: &Path) -> Self {
        Self {
            system: PathBuf::from(SYSTEM_CONFIG_PATH),
            home: env.var("HOME").filter(|h| !h.is_empty()).map(PathBuf::from),
            cwd: cwd.to_path_buf(),
            extra: env
                .var(CONFIG_ENV)
                .filter(|p| !p.is_empty())
                .map(PathBuf::from),
        }
    }

    /// Existing sources in ascending precedence. Missing files are skipped; a
    /// file reachable through two candidates keeps only its later position.
    pub fn locate(&self) -> Vec<ConfigSource> {
        let candidates = [
            Some(self.system.clone()),
            self.home.as_ref().map(|h| h.join(USER_CONFIG_NAME)),
            Some(self.cwd.join(USER_CONFIG_NAME)),
            self.extra.clone(),
        ];
        let found: Vec<PathBuf> = candidates
            .into_iter()
            .flatten()
            .filter(|p| p.is_file())
            .collect();
        let canonical: Vec<PathBuf> = found
            .iter()
            .map(|p| std::fs::canonicalize(p).unwrap_or_else(|_| p.clone()))
            .collect();

        let mut sources = vec![ConfigSource {
            location: SourceLocation::Bundled,
            precedence: 0,
        }];
        for (i, path) in found.into_iter().enumerate() {
            if canonical[i + 1..].contains(&canonical[i]) {
                continue;
            }
            let precedence = sources.len() as u32;
            sources.push(ConfigSource {
                location: SourceLocation::File(path),
                precedence,
            });
        }
        sources
    }
}

pub fn locate_sources(env: &dyn Environment, cwd: &Path) -> Vec<ConfigSource> {
    SearchPaths::from_env(env, cwd).locate()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub user: String,
    pub assistant: String,
}

impl Exchange {
    pub fn new(user: impl Into<String>, assistant: impl Into<String>) -> Self {
        Self {
            user: user.into(),
            assistant: assistant.into(),
        }
    }
}

/// System prompt and canned multi-shot exchanges for one host program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramProfile {
    /// Base name of the host executable.
    pub program: String,
    pub system_prompt: String,
    /// Prefix that makes a line a comment in the host program.
    pub comment_leader: String,
    /// Standing instructions appended to the system prompt. `None` selects
    /// the built-in text; an empty string disables them.
    pub instructions: Option<String>,
    pub exchanges: Vec<Exchange>,
}

impl ProgramProfile {
    pub fn new(program: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            system_prompt: system_prompt.into(),
            comment_leader: defaults::COMMENT_LEADER.to_owned(),
            instructions: None,
            exchanges: Vec::new(),
        }
    }

    /// Generic profile for a program without a configured one.
    pub fn fallback(program: &str) -> Self {
        Self::new(
            program,
            format!("You are an assistant who provides executable commands for the {program} command-line interface."),
        )
    }

    pub fn with_exchange(mut self, user: impl Into<String>, assistant: impl Into<String>) -> Self {
        self.exchanges.push(Exchange::new(user, assistant));
        self
    }
}

/// Per-1000-token prices used for cost estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pricing {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl Default for Pricing {
    fn default() -> Self {
        Self {
            prompt_per_1k: defaults::PRICE_PROMPT_PER_1K,
            completion_per_1k: defaults::PRICE_COMPLETION_PER_1K,
        }
    }
}

/// The effective configuration after layering.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: String,
    pub temperature: f64,
    pub api_key: Option<String>,
    pub endpoint_url: String,
    pub key_binding: KeySequence,
    pub history_context: usize,
    pub timeout_ms: u64,
    pub max_exchanges: usize,
    pub pricing: Pricing,
    pub debug_log: Option<PathBuf>,
    pub profiles: BTreeMap<String, ProgramProfile>,
}

impl Default for Config {
    fn default() -> Self {
        Config::with_defaults(PartialConfig::default())
    }
}

impl Config {
    fn with_defaults(p: PartialConfig) -> Self {
        Self {
            model: p.model.unwrap_or_else(|| defaults::MODEL.to_owned()),
            temperature: p.temperature.unwrap_or(defaults::TEMPERATURE),
            api_key: p.api_key,
            endpoint_url: p
                .endpoint_url
                .unwrap_or_else(|| defaults::ENDPOINT.to_owned()),
            key_binding: p.key_binding.unwrap_or_default(),
            history_context: p.history_context.unwrap_or(defaults::HISTORY_CONTEXT),
            timeout_ms: p.timeout_ms.unwrap_or(defaults::TIMEOUT_MS),
            max_exchanges: p.max_exchanges.unwrap_or(defaults::MAX_EXCHANGES),
            pricing: Pricing {
                prompt_per_1k: p
                    .price_prompt_per_1k
                    .unwrap_or(defaults::PRICE_PROMPT_PER_1K),
                completion_per_1k: p
                    .price_completion_per_1k
                    .unwrap_or(defaults::PRICE_COMPLETION_PER_1K),
            },
            debug_log: p.debug_log,
            profiles: p.profiles,
        }
    }

    /// Checks constraints that span keys, which single files cannot.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for profile in self.profiles.values() {
            if profile.exchanges.len() > self.max_exchanges {
                return Err(ConfigError::TooManyExchanges {
                    program: profile.program.clone(),
                    count: profile.exchanges.len(),
                    max: self.max_exchanges,
                });
            }
        }
        Ok(())
    }

    pub fn profile_for(&self, program: &str) -> ProgramProfile {
        profile_for(self, program)
    }
}

/// The keys one configuration file sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub api_key: Option<String>,
    pub endpoint_url: Option<String>,
    pub key_binding: Option<KeySequence>,
    pub history_context: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub max_exchanges: Option<usize>,
    pub price_prompt_per_1k: Option<f64>,
    pub price_completion_per_1k: Option<f64>,
    pub debug_log: Option<PathBuf>,
    pub profiles: BTreeMap<String, ProgramProfile>,
    pub warnings: Vec<ConfigWarning>,
}

impl PartialConfig {
    /// Lays `upper` over `self`: every key `upper` sets wins, and each of its
    /// profiles replaces the same-named one wholesale.
    pub fn overlay(&mut self, upper: &PartialConfig) {
        fn take<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        take(&mut self.model, &upper.model);
        take(&mut self.temperature, &upper.temperature);
        take(&mut self.api_key, &upper.api_key);
        take(&mut self.endpoint_url, &upper.endpoint_url);
        take(&mut self.key_binding, &upper.key_binding);
        take(&mut self.history_context, &upper.history_context);
        take(&mut self.timeout_ms, &upper.timeout_ms);
        take(&mut self.max_exchanges, &upper.max_exchanges);
        take(&mut self.price_prompt_per_1k, &upper.price_prompt_per_1k);
        take(
            &mut self.price_completion_per_1k,
            &upper.price_completion_per_1k,
        );
        take(&mut self.debug_log, &upper.debug_log);
        for (name, profile) in &upper.profiles {
            self.profiles.insert(name.clone(), profile.clone());
        }
        self.warnings.extend(upper.warnings.iter().cloned());
    }

    /// Canonical INI rendering; [`parse_source`] reads it back unchanged.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut general = String::new();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                let _ = writeln!(general, "{key} = {}", ini::format_value(&v));
            }
        };
        put("model", self.model.clone());
        put("temperature", self.temperature.map(|t| t.to_string()));
        put("endpoint", self.endpoint_url.clone());
        put("timeout_ms", self.timeout_ms.map(|t| t.to_string()));
        put(
            "history_context",
            self.history_context.map(|t| t.to_string()),
        );
        put("max_exchanges", self.max_exchanges.map(|t| t.to_string()));
        put(
            "price_prompt_per_1k",
            self.price_prompt_per_1k.map(|t| t.to_string()),
        );
        put(
            "price_completion_per_1k",
            self.price_completion_per_1k.map(|t| t.to_string()),
        );
        put(
            "debug_log",
            self.debug_log.as_ref().map(|p| p.display().to_string()),
        );
        if !general.is_empty() {
            out.push_str("[general]\n");
            out.push_str(&general);
        }
        if let Some(seq) = &self.key_binding {
            let _ = write!(out, "[binding]\nai_help = {seq}\n");
        }
        if let Some(key) = &self.api_key {
            let _ = write!(out, "[auth]\napi_key = {key}\n");
        }
        for profile in self.profiles.values() {
            let _ = writeln!(out, "[prompt-{}]", profile.program);
            let _ = writeln!(
                out,
                "system = {}",
                ini::format_value(&profile.system_prompt)
            );
            let _ = writeln!(out, "comment = {}", profile.comment_leader);
            if let Some(text) = &profile.instructions {
                let _ = writeln!(out, "instructions = {}", ini::format_value(text));
            }
            for (i, ex) in profile.exchanges.iter().enumerate() {
                let _ = writeln!(out, "user-{} = {}", i + 1, ini::format_value(&ex.user));
                let _ = writeln!(
                    out,
                    "assistant-{} = {}",
                    i + 1,
                    ini::format_value(&ex.assistant)
                );
            }
        }
        out
    }
}

impl From<&Config> for PartialConfig {
    fn from(c: &Config) -> Self {
        Self {
            model: Some(c.model.clone()),
            temperature: Some(c.temperature),
            api_key: c.api_key.clone(),
            endpoint_url: Some(c.endpoint_url.clone()),
            key_binding: Some(c.key_binding.clone()),
            history_context: Some(c.history_context),
            timeout_ms: Some(c.timeout_ms),
            max_exchanges: Some(c.max_exchanges),
            price_prompt_per_1k: Some(c.pricing.prompt_per_1k),
            price_completion_per_1k: Some(c.pricing.completion_per_1k),
            debug_log: c.debug_log.clone(),
            profiles: c.profiles.clone(),
            warnings: Vec::new(),
        }
    }
}

/// A key or section that was ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigWarning {
    pub line: usize,
    pub section: String,
    pub key: Option<String>,
}

impl fmt::Display for ConfigWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(key) => write!(
                f,
                "line {}: unknown key `{key}` in [{}]",
                self.line, self.section
            ),
            None => write!(f, "line {}: unknown section [{}]", self.line, self.section),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{source_name}: line {line}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}: line {line}: bad value for `{key}`: {message}")]
    Value {
        source_name: String,
        line: usize,
        key: String,
        message: String,
    },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("profile `{program}` has {count} exchanges, more than the maximum of {max}")]
    TooManyExchanges {
        program: String,
        count: usize,
        max: usize,
    },
}

const INPUT_NAME: &str = "<input>";

/// Parses one configuration file.
pub fn parse_source(text: &str) -> Result<PartialConfig, ConfigError> {
    parse_named(text, INPUT_NAME)
}

pub fn parse_named(text: &str, source_name: &str) -> Result<PartialConfig, ConfigError> {
    let doc = ini::parse(text).map_err(|e| ConfigError::Syntax {
        source_name: source_name.to_owned(),
        line: e.line,
        message: e.message,
    })?;
    let parser = Parser { source_name };
    let mut out = PartialConfig::default();
    let mut prompts: BTreeMap<String, ProfileBuilder> = BTreeMap::new();

    for section in &doc.sections {
        let name = section.name.as_str();
        if let Some(program) = name.strip_prefix("prompt-") {
            if program.is_empty() {
                return Err(parser.syntax(section.line, "prompt section without a program name"));
            }
            let builder = prompts
                .entry(program.to_owned())
                .or_insert_with(|| ProfileBuilder {
                    line: section.line,
                    ..Default::default()
                });
            for entry in &section.entries {
                if !builder.accept(entry, &parser)? {
                    out.warnings.push(parser.unknown(name, entry));
                }
            }
            continue;
        }
        for entry in &section.entries {
            let known = match name {
                "general" => parser.general(&mut out, entry)?,
                "binding" => parser.binding(&mut out, entry)?,
                "auth" => parser.auth(&mut out, entry)?,
                _ => false,
            };
            if !known && matches!(name, "general" | "binding" | "auth") {
                out.warnings.push(parser.unknown(name, entry));
            }
        }
        if !matches!(name, "general" | "binding" | "auth") {
            out.warnings.push(ConfigWarning {
                line: section.line,
                section: name.to_owned(),
                key: None,
            });
        }
    }

    for (program, builder) in prompts {
        let profile = builder.finish(&program, &parser)?;
        out.profiles.insert(program, profile);
    }
    Ok(out)
}

struct Parser<'a> {
    source_name: &'a str,
}

impl Parser<'_> {
    fn syntax(&self, line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError::Syntax {
            source_name: self.source_name.to_owned(),
            line,
            message: message.into(),
        }
    }

    fn value_err(&self, entry: &IniEntry, message: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            source_name: self.source_name.to_owned(),
            line: entry.line,
            key: entry.key.clone(),
            message: message.into(),
        }
    }

    fn unknown(&self, section: &str, entry: &IniEntry) -> ConfigWarning {
        ConfigWarning {
            line: entry.line,
            section: section.to_owned(),
            key: Some(entry.key.clone()),
        }
    }

    fn non_empty(&self, entry: &IniEntry) -> Result<String, ConfigError> {
        if entry.value.is_empty() {
            Err(self.value_err(entry, "must not be empty"))
        } else {
            Ok(entry.value.clone())
        }
    }

    fn number<T: std::str::FromStr>(&self, entry: &IniEntry) -> Result<T, ConfigError> {
        entry
            .value
            .parse()
            .map_err(|_| self.value_err(entry, format!("`{}` is not a valid number", entry.value)))
    }

    fn price(&self, entry: &IniEntry) -> Result<f64, ConfigError> {
        let price: f64 = self.number(entry)?;
        if !price.is_finite() || price < 0.0 {
            return Err(self.value_err(entry, "must be a non-negative price"));
        }
        Ok(price)
    }

    fn general(&self, out: &mut PartialConfig, entry: &IniEntry) -> Result<bool, ConfigError> {
        match entry.key.as_str() {
            "model" => out.model = Some(self.non_empty(entry)?),
            "temperature" => {
                let t: f64 = self.number(entry)?;
                check_temperature(t).map_err(|m| self.value_err(entry, m))?;
                out.temperature = Some(t);
            }
            "endpoint" => {
                check_endpoint(&entry.value).map_err(|m| self.value_err(entry, m))?;
                out.endpoint_url = Some(entry.value.clone());
            }
            "timeout_ms" => {
                let ms: u64 = self.number(entry)?;
                if ms == 0 {
                    return Err(self.value_err(entry, "must be positive"));
                }
                out.timeout_ms = Some(ms);
            }
            "history_context" => out.history_context = Some(self.number(entry)?),
            "max_exchanges" => out.max_exchanges = Some(self.number(entry)?),
            "price_prompt_per_1k" => out.price_prompt_per_1k = Some(self.price(entry)?),
            "price_completion_per_1k" => out.price_completion_per_1k = Some(self.price(entry)?),
            "debug_log" => out.debug_log = Some(PathBuf::from(self.non_empty(entry)?)),
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn binding(&self, out: &mut PartialConfig, entry: &IniEntry) -> Result<bool, ConfigError> {
        if entry.key != "ai_help" {
            return Ok(false);
        }
        let seq =
            KeySequence::parse(&entry.value).map_err(|e| self.value_err(entry, e.to_string()))?;
        out.key_binding = Some(seq);
        Ok(true)
    }

    fn auth(&self, out: &mut PartialConfig, entry: &IniEntry) -> Result<bool, ConfigError> {
        if entry.key != "api_key" {
            return Ok(false);
        }
        out.api_key = Some(self.non_empty(entry)?);
        Ok(true)
    }
}

/// Range check shared by the parser and command-line overrides.
pub fn check_temperature(t: f64) -> Result<(), String> {
    if TEMPERATURE_RANGE.contains(&t) {
        Ok(())
    } else {
        Err(format!("temperature {t} is outside [0, 2]"))
    }
}

/// Accepts absolute `http` and `https` URLs with a host.
pub fn check_endpoint(text: &str) -> Result<(), String> {
    let url = url::Url::parse(text).map_err(|e| format!("`{text}` is not a URL: {e}"))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(format!("`{text}` is not an http(s) URL"));
    }
    if url.host_str().is_none_or(str::is_empty) {
        return Err(format!("`{text}` has no host"));
    }
    Ok(())
}

#[derive(Default)]
struct ProfileBuilder {
    line: usize,
    system: Option<String>,
    comment: Option<String>,
    instructions: Option<String>,
    users: BTreeMap<usize, String>,
    assistants: BTreeMap<usize, String>,
}

impl ProfileBuilder {
    fn accept(&mut self, entry: &IniEntry, parser: &Parser<'_>) -> Result<bool, ConfigError> {
        let key = entry.key.as_str();
        let numbered = |prefix: &str| -> Result<Option<usize>, ConfigError> {
            match key.strip_prefix(prefix) {
                None => Ok(None),
                Some(n) => match n.parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(Some(i)),
                    _ => Err(parser.value_err(entry, "exchange numbers start at 1")),
                },
            }
        };
        if let Some(i) = numbered("user-")? {
            self.users.insert(i, entry.value.clone());
        } else if let Some(i) = numbered("assistant-")? {
            self.assistants.insert(i, entry.value.clone());
        } else {
            match key {
                "system" => self.system = Some(entry.value.clone()),
                "comment" => self.comment = Some(parser.non_empty(entry)?),
                "instructions" => self.instructions = Some(entry.value.clone()),
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    fn finish(mut self, program: &str, parser: &Parser<'_>) -> Result<ProgramProfile, ConfigError> {
        let count = self.users.len().max(self.assistants.len());
        let mut exchanges = Vec::with_capacity(count);
        for i in 1..=count {
            match (self.users.remove(&i), self.assistants.remove(&i)) {
                (Some(user), Some(assistant)) => exchanges.push(Exchange { user, assistant }),
                (Some(_), None) => {
                    return Err(parser.syntax(
                        self.line,
                        format!("[prompt-{program}]: user-{i} has no assistant-{i}"),
                    ))
                }
                (None, Some(_)) => {
                    return Err(parser.syntax(
                        self.line,
                        format!("[prompt-{program}]: assistant-{i} has no user-{i}"),
                    ))
                }
                (None, None) => {
                    return Err(parser.syntax(
                        self.line,
                        format!("[prompt-{program}]: exchange {i} is missing"),
                    ))
                }
            }
        }
        Ok(ProgramProfile {
            program: program.to_owned(),
            system_prompt: self.system.unwrap_or_default(),
            comment_leader: self
                .comment
                .unwrap_or_else(|| defaults::COMMENT_LEADER.to_owned()),
            instructions: self.instructions,
            exchanges,
        })
    }
}

/// Overlays `layers` (ascending precedence) and fills in defaults.
pub fn merge(layers: &[PartialConfig]) -> Config {
    let mut acc = PartialConfig::default();
    for layer in layers {
        acc.overlay(layer);
    }
    Config::with_defaults(acc)
}

/// The configured profile for `program`, or a generic one naming it.
pub fn profile_for(config: &Config, program: &str) -> ProgramProfile {
    config
        .profiles
        .get(program)
        .cloned()
        .unwrap_or_else(|| ProgramProfile::fallback(program))
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub sources: Vec<ConfigSource>,
    /// Warnings tagged with the name of the source they came from.
    pub warnings: Vec<(String, ConfigWarning)>,
}

/// Locates, parses and merges every configuration source.
pub fn load(env: &dyn Environment, cwd: &Path) -> Result<LoadedConfig, ConfigError> {
    load_from(locate_sources(env, cwd), env)
}

/// Parses and merges `sources`, then resolves the API key from the
/// environment when no file set one.
pub fn load_from(
    sources: Vec<ConfigSource>,
    env: &dyn Environment,
) -> Result<LoadedConfig, ConfigError> {
    let mut layers = Vec::with_capacity(sources.len());
    let mut warnings = Vec::new();
    for source in &sources {
        let name = source.name();
        let mut layer = parse_named(&source.read()?, &name)?;
        warnings.extend(layer.warnings.drain(..).map(|w| (name.clone(), w)));
        layers.push(layer);
    }
    let mut config = merge(&layers);
    if config.api_key.is_none() {
        config.api_key = env.var(API_KEY_ENV).filter(|k| !k.is_empty());
    }
    config.validate()?;
    Ok(LoadedConfig {
        config,
        sources,
        warnings,
    })
}
