//! Process-global entry points used by the preloaded shim.

use std::ffi::c_int;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use super::{attach, program_name, AttachState, GlobalScope, Session};
use crate::config::ProcessEnv;

static STARTED: AtomicBool = AtomicBool::new(false);
static STATE: OnceLock<AttachState> = OnceLock::new();
static SESSION: OnceLock<Session> = OnceLock::new();

/// Load-time hook. Runs the attach sequence once per process; later calls
/// return the recorded state.
pub fn on_load() -> AttachState {
    if !STARTED.swap(true, Ordering::SeqCst) {
        let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("/"));
        let attachment = attach(&GlobalScope, &ProcessEnv, &cwd, &program_name(), ai_help);
        let _ = STATE.set(attachment.state);
        if let Some(session) = attachment.session {
            let _ = SESSION.set(session);
        }
    }
    state()
}

/// Current attach state of this process.
pub fn state() -> AttachState {
    let mut state = STATE.get().cloned().unwrap_or_default();
    state.init_count = SESSION.get().map_or(0, |s| s.backend.init_count());
    state
}

/// Builds the HTTP stack now instead of on the first hotkey press.
pub fn force_lazy_init() {
    if let Some(session) = SESSION.get() {
        let _ = session.backend.lazy_init();
    }
}

/// The `ai-help` editor function.
pub extern "C" fn ai_help(_count: c_int, _key: c_int) -> c_int {
    let _ = catch_unwind(AssertUnwindSafe(|| {
        if let Some(session) = SESSION.get() {
            session.on_hotkey();
        }
    }));
    0
}
