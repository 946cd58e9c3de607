//! Attaching to a host program's line editor.
//!
//! At load time the shim looks for the Readline ABI in the host process. If
//! it is there, the shim registers a named editor function, `ai-help`, and
//! binds the configured key sequence to it. When the user presses that key,
//! the natural-language text in the editing buffer is sent to the model and
//! replaced by the returned command, which the user may then edit or run.
//!
//! Hosts without Readline are left untouched: no binding, no buffer access,
//! no configuration reads and no network initialization.

mod abi;
pub mod runtime;

use std::collections::BTreeMap;
use std::ffi::CStr;
use std::io::Write as _;
use std::path::Path;

pub use crate::keyseq::{KeySeqError, KeySequence};
pub use abi::{
    detect_abi, symbols, AbiEditor, BindError, CommandFn, GlobalScope, HistEntry, ReadlineAbi,
    SymbolResolver, TableResolver,
};

use crate::backend::{Backend, BackendError, ChatRequest, OpenAiBackend};
use crate::chat::{self, PromptContext, ERROR_TAG};
use crate::config::{self, Config, Environment, ProgramProfile};

/// Name under which the help function is registered with the editor.
pub const FUNCTION_NAME: &CStr = c"ai-help";

/// What the shim found and installed in the host process.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttachState {
    /// The Readline ABI is present.
    pub detected: bool,
    /// The key binding is installed. Implies `detected`.
    pub bound: bool,
    pub program: String,
    /// Resolved symbol addresses; empty unless `detected`.
    pub resolved: BTreeMap<String, usize>,
    /// How many times the HTTP stack has been initialized.
    pub init_count: usize,
    /// Why attaching stopped short, if it did.
    pub failure: Option<String>,
}

/// Editing operations the hotkey handler needs.
pub trait LineEditor {
    fn buffer(&self) -> String;
    /// Replaces the whole buffer, leaves the cursor at its end and redraws.
    fn replace_buffer(&mut self, text: &str);
    fn ring_bell(&mut self);
    /// The host's history, oldest first.
    fn history(&self) -> Vec<String>;
    fn push_history(&mut self, line: &str);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindStatus {
    Installed,
    /// Another copy of the shim registered `ai-help` first.
    AlreadyInstalled,
}

/// Registers [`FUNCTION_NAME`] and binds `seq` to `callback`.
///
/// Nothing is bound if registration fails.
pub fn install_binding(
    abi: &ReadlineAbi,
    seq: &KeySequence,
    callback: CommandFn,
) -> Result<BindStatus, BindError> {
    if abi.is_registered(FUNCTION_NAME) {
        return Ok(BindStatus::AlreadyInstalled);
    }
    abi.register(FUNCTION_NAME, callback)?;
    abi.bind(seq, callback)?;
    Ok(BindStatus::Installed)
}

/// The last `limit` usable history lines of the host.
pub fn harvest_host_history(editor: &dyn LineEditor, limit: usize) -> Vec<String> {
    chat::harvest_history(&editor.history(), limit)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HotkeyOutcome {
    /// The buffer was blank.
    Bell,
    /// The buffer now holds this command.
    Replaced(String),
    /// The buffer now holds an error comment.
    Failed(BackendError),
}

/// The comment line shown in place of a command when a request fails.
pub fn error_line(comment_leader: &str, err: &BackendError) -> String {
    let detail = err.to_string().replace(['\n', '\r'], " ");
    format!("{comment_leader} {ERROR_TAG} {detail}")
}

/// Turns the natural-language text in the buffer into a command.
pub fn handle_hotkey<E, B>(
    editor: &mut E,
    backend: &B,
    config: &Config,
    profile: &ProgramProfile,
) -> HotkeyOutcome
where
    E: LineEditor + ?Sized,
    B: Backend + ?Sized,
{
    let buffer = editor.buffer();
    let prompt = chat::strip_failed_mark(&buffer, &profile.comment_leader).trim();
    if prompt.is_empty() {
        editor.ring_bell();
        return HotkeyOutcome::Bell;
    }
    let ctx = PromptContext {
        profile: profile.clone(),
        history: chat::harvest_history(&editor.history(), config.history_context),
        live_prompt: prompt.to_owned(),
    };
    let messages = chat::assemble(&ctx, config.history_context).expect("prompt checked non-blank");
    let request = ChatRequest::from_config(config, messages);
    match backend.complete(&request) {
        Ok(response) => {
            let command = response.content.trim().to_owned();
            editor.replace_buffer(&command);
            HotkeyOutcome::Replaced(command)
        }
        Err(err) => {
            editor.replace_buffer(&error_line(&profile.comment_leader, &err));
            editor.push_history(&chat::mark_failed(prompt, &profile.comment_leader));
            HotkeyOutcome::Failed(err)
        }
    }
}

/// Everything the hotkey callback needs, built once at load time.
pub struct Session {
    pub abi: ReadlineAbi,
    pub config: Config,
    pub profile: ProgramProfile,
    pub backend: OpenAiBackend,
}

impl Session {
    pub fn on_hotkey(&self) -> HotkeyOutcome {
        let outcome = handle_hotkey(
            &mut AbiEditor(&self.abi),
            &self.backend,
            &self.config,
            &self.profile,
        );
        if let HotkeyOutcome::Failed(err) = &outcome {
            debug_log(
                &self.config,
                &format!("{}: request failed: {err}", self.profile.program),
            );
        }
        outcome
    }
}

pub struct Attachment {
    pub state: AttachState,
    pub session: Option<Session>,
}

/// Appends `message` to the configured debug log, if any. Never writes to
/// the host's standard streams.
pub fn debug_log(config: &Config, message: &str) {
    if let Some(path) = &config.debug_log {
        if let Ok(mut file) = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
        {
            let _ = writeln!(file, "ai-cli[{}]: {message}", std::process::id());
        }
    }
}

/// The load-time path without the once-per-process guard: detect the ABI,
/// then load configuration, pick the profile and install the binding.
///
/// Never fails; problems end up in [`AttachState::failure`]. Creates no
/// network state.
pub fn attach(
    resolver: &dyn SymbolResolver,
    env: &dyn Environment,
    cwd: &Path,
    program: &str,
    callback: CommandFn,
) -> Attachment {
    let mut state = AttachState {
        program: program.to_owned(),
        ..Default::default()
    };
    let Some(abi) = detect_abi(resolver) else {
        return Attachment {
            state,
            session: None,
        };
    };
    state.detected = true;
    state.resolved = abi.resolved().clone();

    let config = match config::load(env, cwd) {
        Ok(loaded) => loaded.config,
        Err(err) => {
            state.failure = Some(format!("configuration: {err}"));
            return Attachment {
                state,
                session: None,
            };
        }
    };
    match install_binding(&abi, &config.key_binding, callback) {
        Ok(_) => state.bound = true,
        Err(err) => {
            let message = format!("binding {}: {err}", config.key_binding);
            debug_log(&config, &message);
            state.failure = Some(message);
            return Attachment {
                state,
                session: None,
            };
        }
    }
    let profile = config.profile_for(program);
    let backend = OpenAiBackend::new(&config);
    Attachment {
        state,
        session: Some(Session {
            abi,
            config,
            profile,
            backend,
        }),
    }
}

/// Base name of a program path; the leading `-` of login shells is dropped.
pub fn program_base_name(arg0: &str) -> String {
    let base = arg0.rsplit('/').next().unwrap_or(arg0);
    base.strip_prefix('-').unwrap_or(base).to_owned()
}

/// Base name of the running executable as given in its argument vector.
pub fn program_name() -> String {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        extern "C" {
            static program_invocation_short_name: *const std::ffi::c_char;
        }
        let name = unsafe { program_invocation_short_name };
        if !name.is_null() {
            let name = unsafe { CStr::from_ptr(name) }.to_string_lossy();
            if !name.is_empty() {
                return program_base_name(&name);
            }
        }
    }
    std::env::args()
        .next()
        .map(|a| program_base_name(&a))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::abi::fake;
    use super::*;
    use crate::backend::{ChatResponse, ErrorKind, Usage};
    use crate::chat::{ChatMessage, Role};
    use std::cell::RefCell;
    use std::ffi::c_int;

    unsafe extern "C" fn callback(_: c_int, _: c_int) -> c_int {
        0
    }

    #[derive(Default)]
    struct ScriptedEditor {
        buffer: String,
        history: Vec<String>,
        bells: usize,
        writes: usize,
    }

    impl LineEditor for ScriptedEditor {
        fn buffer(&self) -> String {
            self.buffer.clone()
        }
        fn replace_buffer(&mut self, text: &str) {
            self.writes += 1;
            self.buffer = text.to_owned();
        }
        fn ring_bell(&mut self) {
            self.bells += 1;
        }
        fn history(&self) -> Vec<String> {
            self.history.clone()
        }
        fn push_history(&mut self, line: &str) {
            self.history.push(line.to_owned());
        }
    }

    struct ScriptedBackend {
        reply: Result<String, BackendError>,
        seen: RefCell<Vec<ChatRequest>>,
    }

    impl ScriptedBackend {
        fn answering(text: &str) -> Self {
            Self {
                reply: Ok(text.to_owned()),
                seen: RefCell::new(Vec::new()),
            }
        }
        fn failing(err: BackendError) -> Self {
            Self {
                reply: Err(err),
                seen: RefCell::new(Vec::new()),
            }
        }
    }

    impl Backend for ScriptedBackend {
        fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
            self.seen.borrow_mut().push(req.clone());
            self.reply.clone().map(|content| ChatResponse {
                id: "x".into(),
                model: req.model.clone(),
                content,
                finish_reason: "stop".into(),
                usage: Usage::new(1, 1),
            })
        }
    }

    fn bash() -> ProgramProfile {
        ProgramProfile::fallback("bash").with_exchange("List files in current directory", "ls")
    }

    #[test]
    fn hotkey_replaces_prompt_with_command() {
        let mut ed = ScriptedEditor {
            buffer: "How long has the computer been running?".into(),
            history: vec!["ls".into(), "pwd".into()],
            ..Default::default()
        };
        let backend = ScriptedBackend::answering("uptime\n");
        let outcome = handle_hotkey(&mut ed, &backend, &Config::default(), &bash());
        assert_eq!(outcome, HotkeyOutcome::Replaced("uptime".into()));
        assert_eq!(ed.buffer, "uptime");
        assert_eq!(ed.writes, 1);

        let req = &backend.seen.borrow()[0];
        assert_eq!(req.model, "gpt-3.5-turbo");
        let contents: Vec<&str> = req.messages.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(
            &contents[1..],
            [
                "List files in current directory",
                "ls",
                "ls",
                "pwd",
                "How long has the computer been running?"
            ]
        );
        assert_eq!(req.messages[3], ChatMessage::user("ls"));
        assert_eq!(req.messages[0].role, Role::System);
    }

    #[test]
    fn blank_buffer_rings_bell() {
        let mut ed = ScriptedEditor {
            buffer: "   ".into(),
            ..Default::default()
        };
        let backend = ScriptedBackend::answering("never");
        assert_eq!(
            handle_hotkey(&mut ed, &backend, &Config::default(), &bash()),
            HotkeyOutcome::Bell
        );
        assert_eq!(ed.bells, 1);
        assert_eq!(ed.buffer, "   ");
        assert_eq!(ed.writes, 0);
        assert!(backend.seen.borrow().is_empty());
    }

    #[test]
    fn failure_writes_comment_and_marks_history() {
        let mut ed = ScriptedEditor {
            buffer: "list big files".into(),
            ..Default::default()
        };
        let backend = ScriptedBackend::failing(BackendError::new(ErrorKind::HttpStatus(500), ""));
        let outcome = handle_hotkey(&mut ed, &backend, &Config::default(), &bash());
        assert!(matches!(outcome, HotkeyOutcome::Failed(_)));
        assert_eq!(ed.buffer, "# ai-cli error: http_status 500");
        assert_eq!(ed.writes, 1);
        assert_eq!(ed.history, ["list big files # ai-cli: failed"]);
        assert!(chat::harvest_history(&ed.history, 5).is_empty());
    }

    #[test]
    fn error_line_is_one_commented_line() {
        let err = BackendError::new(ErrorKind::ApiError, "two\nlines");
        let line = error_line("--", &err);
        assert_eq!(line, "-- ai-cli error: api_error: two lines");
        assert!(!line.contains('\n'));
    }

    #[test]
    fn retry_of_recalled_failed_prompt_strips_mark() {
        let mut ed = ScriptedEditor {
            buffer: "list big files # ai-cli: failed".into(),
            ..Default::default()
        };
        let backend = ScriptedBackend::answering("ls -S | head");
        handle_hotkey(&mut ed, &backend, &Config::default(), &bash());
        let req = &backend.seen.borrow()[0];
        assert_eq!(req.messages.last().unwrap().content, "list big files");
    }

    #[test]
    fn history_limit_from_config() {
        let mut ed = ScriptedEditor {
            buffer: "go".into(),
            history: (1..=6).map(|i| format!("cmd{i}")).collect(),
            ..Default::default()
        };
        let config = Config {
            history_context: 1,
            ..Config::default()
        };
        let backend = ScriptedBackend::answering("x");
        handle_hotkey(&mut ed, &backend, &config, &bash());
        let req = &backend.seen.borrow()[0];
        assert_eq!(req.messages.len(), 1 + 2 + 1 + 1);
        assert_eq!(req.messages[3].content, "cmd6");
    }

    #[test]
    fn harvest_host_history_examples() {
        let mut ed = ScriptedEditor::default();
        assert!(harvest_host_history(&ed, 3).is_empty());
        ed.history = vec!["ls".into(), "pwd".into()];
        assert_eq!(harvest_host_history(&ed, 3), ["ls", "pwd"]);
        assert_eq!(harvest_host_history(&ed, 1), ["pwd"]);
    }

    fn empty_env() -> BTreeMap<String, String> {
        let dir = std::env::temp_dir().join("aicli-attach-test-nohome");
        [("HOME".to_owned(), dir.display().to_string())]
            .into_iter()
            .collect()
    }

    #[test]
    fn attach_without_abi_is_inert() {
        let a = attach(
            &TableResolver::default(),
            &empty_env(),
            Path::new("/nonexistent"),
            "less",
            callback,
        );
        assert!(!a.state.detected);
        assert!(!a.state.bound);
        assert!(a.state.resolved.is_empty());
        assert_eq!(a.state.init_count, 0);
        assert!(a.session.is_none());
    }

    #[test]
    fn attach_binds_default_sequence() {
        let _s = fake::session();
        let a = attach(
            &fake::resolver(),
            &empty_env(),
            Path::new("/nonexistent"),
            "bash",
            callback,
        );
        assert!(a.state.detected && a.state.bound, "{:?}", a.state.failure);
        let session = a.session.unwrap();
        assert_eq!(session.backend.init_count(), 0);
        assert_eq!(session.profile.program, "bash");
        assert!(!session.profile.exchanges.is_empty());
        fake::with(|s| {
            assert_eq!(
                s.defuns,
                vec![("ai-help".to_owned(), callback as *const () as usize)]
            );
            assert_eq!(
                s.bindings,
                vec![(vec![0x18, 0x61], callback as *const () as usize)]
            );
        });

        // A second copy finds the function registered and binds nothing new.
        let again = attach(
            &fake::resolver(),
            &empty_env(),
            Path::new("/nonexistent"),
            "bash",
            callback,
        );
        assert!(again.state.bound);
        fake::with(|s| assert_eq!(s.bindings.len(), 1));
    }

    #[test]
    fn attach_honours_configured_binding() {
        let _s = fake::session();
        let dir = tempfile::TempDir::new().unwrap();
        let conf = dir.path().join("c.conf");
        std::fs::write(&conf, "[binding]\nai_help = ctrl-g\n").unwrap();
        let mut env = empty_env();
        env.insert(config::CONFIG_ENV.into(), conf.display().to_string());
        let a = attach(&fake::resolver(), &env, dir.path(), "bash", callback);
        assert!(a.state.bound);
        fake::with(|s| {
            assert_eq!(
                s.bindings,
                vec![(vec![0x07], callback as *const () as usize)]
            )
        });
    }

    #[test]
    fn registration_failure_leaves_host_unbound() {
        let _s = fake::session();
        fake::with(|s| s.fail_register = true);
        let a = attach(
            &fake::resolver(),
            &empty_env(),
            Path::new("/nonexistent"),
            "bash",
            callback,
        );
        assert!(a.state.detected);
        assert!(!a.state.bound);
        assert!(a.state.failure.is_some());
        assert!(a.session.is_none());
        fake::with(|s| assert!(s.bindings.is_empty()));
    }

    #[test]
    fn bad_configuration_leaves_host_unbound() {
        let _s = fake::session();
        let dir = tempfile::TempDir::new().unwrap();
        let conf = dir.path().join("c.conf");
        std::fs::write(&conf, "[general]\ntemperature = hot\n").unwrap();
        let mut env = empty_env();
        env.insert(config::CONFIG_ENV.into(), conf.display().to_string());
        let a = attach(&fake::resolver(), &env, dir.path(), "bash", callback);
        assert!(a.state.detected && !a.state.bound);
        assert!(a.state.failure.unwrap().starts_with("configuration:"));
        fake::with(|s| assert!(s.bindings.is_empty() && s.defuns.is_empty()));
    }

    #[test]
    fn failures_go_to_debug_log_only() {
        let dir = tempfile::TempDir::new().unwrap();
        let log = dir.path().join("debug.log");
        let config = Config {
            debug_log: Some(log.clone()),
            ..Config::default()
        };
        debug_log(&config, "hello");
        debug_log(&config, "again");
        let text = std::fs::read_to_string(&log).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("hello"));
        debug_log(&Config::default(), "dropped");
    }

    #[test]
    fn base_names() {
        assert_eq!(program_base_name("/usr/bin/gdb"), "gdb");
        assert_eq!(program_base_name("-bash"), "bash");
        assert_eq!(program_base_name("sqlite3"), "sqlite3");
        assert!(!program_name().is_empty());
    }
}
