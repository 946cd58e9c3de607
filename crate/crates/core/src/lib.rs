//! Natural-language command assistance for interactive command-line programs.
//!
//! The crate holds everything except the thin preload shim: layered INI
//! configuration, prompt assembly, the chat-completions client and the
//! line-editor attach logic.

pub mod attach;
pub mod backend;
pub mod chat;
pub mod config;
pub mod ini;
pub mod keyseq;

pub use attach::{AttachState, HotkeyOutcome, LineEditor};
pub use backend::{
    estimate_cost, parse_response, serialize_request, Backend, BackendError, ChatRequest,
    ChatResponse, ErrorKind, OpenAiBackend, Usage, UsageLedger,
};
pub use chat::{assemble, harvest_history, ChatMessage, PromptContext, Role};
pub use config::{
    load, merge, Config, ConfigError, Exchange, PartialConfig, Pricing, ProgramProfile,
};
pub use keyseq::KeySequence;
