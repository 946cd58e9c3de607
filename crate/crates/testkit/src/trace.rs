//! System-call tracing of PTY sessions through `strace`, when installed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::pty::{run_argv, HarnessError, PtyOutcome, PtySession, Step};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("system call tracing unavailable: {0}")]
    CapabilityUnavailable(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("cannot read trace: {0}")]
    Read(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyscallEvent {
    pub pid: Option<u32>,
    /// Seconds since the Unix epoch.
    pub at: f64,
    pub name: String,
}

#[derive(Debug)]
pub struct SyscallLog {
    pub events: Vec<SyscallEvent>,
    /// Time of the first hotkey, seconds since the Unix epoch.
    pub first_hotkey: Option<f64>,
    pub outcome: PtyOutcome,
}

impl SyscallLog {
    pub fn before_hotkey(&self) -> impl Iterator<Item = &SyscallEvent> {
        let cut = self.first_hotkey.unwrap_or(f64::INFINITY);
        self.events.iter().filter(move |e| e.at < cut)
    }

    pub fn after_hotkey(&self) -> impl Iterator<Item = &SyscallEvent> {
        let cut = self.first_hotkey.unwrap_or(f64::INFINITY);
        self.events.iter().filter(move |e| e.at >= cut)
    }
}

/// Names of calls that create sockets or draw entropy.
pub const NETWORK_OR_ENTROPY: [&str; 4] = ["socket", "connect", "getrandom", "socketpair"];

pub fn find_in_path(program: &str) -> Option<PathBuf> {
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|p| p.is_file())
    })
}

/// Parses `strace -f -ttt` output.
pub fn parse_strace(text: &str) -> Vec<SyscallEvent> {
    text.lines()
        .filter_map(|line| {
            let mut fields = line.split_whitespace();
            let first = fields.next()?;
            let (pid, stamp) = match first.parse::<u32>() {
                Ok(pid) if !first.contains('.') => (Some(pid), fields.next()?),
                _ => (None, first),
            };
            let at = stamp.parse::<f64>().ok()?;
            let rest = fields.next()?;
            let name = rest.split('(').next()?;
            if name.is_empty()
                || !rest.contains('(')
                || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
            {
                return None;
            }
            Some(SyscallEvent {
                pid,
                at,
                name: name.to_owned(),
            })
        })
        .collect()
}

fn epoch_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Runs `script` with the host under `strace` and returns its system calls.
pub fn trace_syscalls(session: &PtySession, script: &[Step]) -> Result<SyscallLog, TraceError> {
    let strace = find_in_path("strace")
        .ok_or_else(|| TraceError::CapabilityUnavailable("strace not found".into()))?;
    let log = session.home().join("strace.log");
    let mut argv: Vec<String> = vec![
        strace.display().to_string(),
        "-f".into(),
        "-ttt".into(),
        "-o".into(),
        log.display().to_string(),
    ];
    if let Some(shim) = session.preload_path() {
        argv.push("-E".into());
        argv.push(format!("LD_PRELOAD={}", shim.display()));
    }
    argv.extend(session.argv().map(str::to_owned));
    let outcome = run_argv(session, &argv, false, script)?;
    let events = read_log(&log)?;
    Ok(SyscallLog {
        events,
        first_hotkey: outcome.hotkeys.first().copied().map(epoch_seconds),
        outcome,
    })
}

fn read_log(path: &Path) -> Result<Vec<SyscallEvent>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|e| TraceError::Read(e.to_string()))?;
    Ok(parse_strace(&text))
}
