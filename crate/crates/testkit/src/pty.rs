//! Runs host programs inside a pseudo-terminal and drives them by keystrokes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime};

use aicli_core::config::{API_KEY_ENV, CONFIG_ENV};
use aicli_core::KeySequence;
use portable_pty::{native_pty_system, CommandBuilder, ExitStatus, PtySize};
use tempfile::TempDir;

use crate::mock::{MockServer, RecordedExchange, Recorder};

pub const DEFAULT_EXPECT_TIMEOUT: Duration = Duration::from_secs(5);
/// API key written into every session's configuration.
pub const TEST_API_KEY: &str = "sk-aicli-test";
const PRELOAD_ENV: &str = "LD_PRELOAD";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("refusing non-loopback endpoint {0}")]
    NonLoopback(String),
    #[error("harness setup failed: {0}")]
    Setup(String),
    #[error("timed out waiting for {expected:?}; transcript:\n{transcript}")]
    ExpectTimeout {
        expected: String,
        transcript: String,
    },
    #[error("expected silence, got {output:?}")]
    NotSilent { output: String },
    #[error("host killed by {signal}; transcript:\n{transcript}")]
    HostCrashed { signal: String, transcript: String },
}

fn setup<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Setup(e.to_string())
}

/// Whether `endpoint` names a loopback host.
pub fn is_loopback_endpoint(endpoint: &str) -> bool {
    match url::Url::parse(endpoint)
        .ok()
        .and_then(|u| u.host().map(|h| h.to_owned()))
    {
        Some(url::Host::Ipv4(ip)) => ip.is_loopback(),
        Some(url::Host::Ipv6(ip)) => ip.is_loopback(),
        Some(url::Host::Domain(d)) => d == "localhost",
        None => false,
    }
}

/// A host program prepared to run under the shim against a local endpoint.
///
/// The session owns a scratch home directory holding the configuration the
/// shim reads, so no user or system configuration leaks into tests.
pub struct PtySession {
    program: String,
    args: Vec<String>,
    env: BTreeMap<String, String>,
    preload: Option<PathBuf>,
    endpoint: String,
    home: TempDir,
    recorder: Option<Recorder>,
    expect_timeout: Duration,
    size: PtySize,
}

impl PtySession {
    pub fn new(program: impl Into<String>, endpoint: &str) -> Result<Self, HarnessError> {
        if !is_loopback_endpoint(endpoint) {
            return Err(HarnessError::NonLoopback(endpoint.to_owned()));
        }
        let home = TempDir::new().map_err(setup)?;
        let session = Self {
            program: program.into(),
            args: Vec::new(),
            env: BTreeMap::new(),
            preload: None,
            endpoint: endpoint.to_owned(),
            home,
            recorder: None,
            expect_timeout: DEFAULT_EXPECT_TIMEOUT,
            size: PtySize {
                rows: 24,
                cols: 200,
                pixel_width: 0,
                pixel_height: 0,
            },
        };
        session.write_config("")?;
        Ok(session)
    }

    pub fn for_mock(program: impl Into<String>, mock: &MockServer) -> Result<Self, HarnessError> {
        let mut session = Self::new(program, &mock.endpoint())?;
        session.recorder = Some(mock.recorder());
        Ok(session)
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn args<I: IntoIterator<Item = S>, S: Into<String>>(mut self, args: I) -> Self {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.insert(key.into(), value.into());
        self
    }

    pub fn preload(mut self, shim: impl Into<PathBuf>) -> Self {
        self.preload = Some(shim.into());
        self
    }

    pub fn expect_timeout(mut self, timeout: Duration) -> Self {
        self.expect_timeout = timeout;
        self
    }

    /// Appends `text` to the session configuration file. The endpoint and
    /// API key settings cannot be overridden.
    pub fn extra_config(self, text: &str) -> Result<Self, HarnessError> {
        self.write_config(text)?;
        Ok(self)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn home(&self) -> &Path {
        self.home.path()
    }

    pub fn config_path(&self) -> PathBuf {
        self.home.path().join("ai-cli-test.conf")
    }

    pub fn program(&self) -> &str {
        &self.program
    }

    pub fn argv(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.program.as_str()).chain(self.args.iter().map(String::as_str))
    }

    pub fn preload_path(&self) -> Option<&Path> {
        self.preload.as_deref()
    }

    fn write_config(&self, extra: &str) -> Result<(), HarnessError> {
        let mut text = String::from(extra);
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&format!(
            "\n[general]\nendpoint = {}\ntimeout_ms = 3000\n\n[auth]\napi_key = {TEST_API_KEY}\n",
            self.endpoint
        ));
        std::fs::write(self.config_path(), text).map_err(setup)
    }

    /// Environment for the host, without the preload variable.
    pub fn host_env(&self) -> BTreeMap<String, String> {
        let mut env: BTreeMap<String, String> = [
            ("HOME", self.home.path().display().to_string()),
            (CONFIG_ENV, self.config_path().display().to_string()),
            ("TERM", "dumb".to_owned()),
            ("PS1", "$ ".to_owned()),
            ("INPUTRC", "/dev/null".to_owned()),
            ("LANG", "C".to_owned()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        env.extend(self.env.clone());
        env
    }

    fn command(&self, argv: &[String], preload_in_env: bool) -> CommandBuilder {
        let mut cmd = CommandBuilder::new(&argv[0]);
        cmd.args(&argv[1..]);
        for key in [
            PRELOAD_ENV,
            CONFIG_ENV,
            API_KEY_ENV,
            "HISTFILE",
            "BASH_ENV",
            "ENV",
        ] {
            cmd.env_remove(key);
        }
        for (k, v) in self.host_env() {
            cmd.env(k, v);
        }
        if preload_in_env {
            if let Some(shim) = &self.preload {
                cmd.env(PRELOAD_ENV, shim);
            }
        }
        cmd.cwd(self.home.path());
        cmd
    }
}

/// One scripted action.
#[derive(Debug, Clone)]
pub enum Step {
    Send(Vec<u8>),
    /// Text followed by carriage return.
    Line(String),
    /// The key sequence's wire bytes.
    Hotkey(KeySequence),
    /// Waits for text that appears after the previous match.
    Expect(String),
    ExpectWithin(String, Duration),
    /// Fails if the host writes anything during the interval.
    Silent(Duration),
    Sleep(Duration),
    /// End-of-input (ctrl-D).
    Eof,
}

impl Step {
    pub fn line(text: impl Into<String>) -> Self {
        Step::Line(text.into())
    }

    pub fn expect(text: impl Into<String>) -> Self {
        Step::Expect(text.into())
    }

    pub fn hotkey() -> Self {
        Step::Hotkey(KeySequence::default_binding())
    }
}

#[derive(Debug)]
pub struct PtyOutcome {
    pub transcript: Vec<u8>,
    /// `None` if the host had to be killed after the script finished.
    pub exit: Option<ExitStatus>,
    pub recordings: Vec<RecordedExchange>,
    /// When each hotkey step was sent.
    pub hotkeys: Vec<SystemTime>,
}

impl PtyOutcome {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.transcript).into_owned()
    }
}

#[derive(Default)]
struct Output {
    bytes: Vec<u8>,
    closed: bool,
}

type Shared = Arc<(Mutex<Output>, Condvar)>;

fn snapshot(shared: &Shared) -> Vec<u8> {
    shared
        .0
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .bytes
        .clone()
}

/// Runs `script` against the session's host and returns the transcript.
pub fn pty_run(session: &PtySession, script: &[Step]) -> Result<PtyOutcome, HarnessError> {
    let argv: Vec<String> = session.argv().map(str::to_owned).collect();
    run_argv(session, &argv, true, script)
}

/// Like [`pty_run`] but with the host started through `argv`, which is
/// expected to hand the preload path to the real host itself.
pub(crate) fn run_argv(
    session: &PtySession,
    argv: &[String],
    preload_in_env: bool,
    script: &[Step],
) -> Result<PtyOutcome, HarnessError> {
    let pair = native_pty_system().openpty(session.size).map_err(setup)?;
    let mut child = pair
        .slave
        .spawn_command(session.command(argv, preload_in_env))
        .map_err(setup)?;
    drop(pair.slave);
    let mut reader = pair.master.try_clone_reader().map_err(setup)?;
    let mut writer = pair.master.take_writer().map_err(setup)?;

    let shared: Shared = Arc::default();
    let reader_thread = {
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || {
            let mut buf = [0u8; 4096];
            loop {
                let n = reader.read(&mut buf).unwrap_or(0);
                let (lock, cvar) = &*shared;
                let mut out = lock.lock().unwrap_or_else(|e| e.into_inner());
                if n == 0 {
                    out.closed = true;
                    cvar.notify_all();
                    return;
                }
                out.bytes.extend_from_slice(&buf[..n]);
                cvar.notify_all();
            }
        })
    };

    let mut cursor = 0usize;
    let mut hotkeys = Vec::new();
    let result = (|| {
        for step in script {
            match step {
                Step::Send(bytes) => writer.write_all(bytes).map_err(setup)?,
                Step::Line(text) => {
                    writer.write_all(text.as_bytes()).map_err(setup)?;
                    writer.write_all(b"\r").map_err(setup)?;
                }
                Step::Hotkey(seq) => {
                    hotkeys.push(SystemTime::now());
                    writer.write_all(seq.wire()).map_err(setup)?;
                }
                Step::Expect(text) => {
                    cursor = expect(&shared, &mut *child, cursor, text, session.expect_timeout)?
                }
                Step::ExpectWithin(text, t) => {
                    cursor = expect(&shared, &mut *child, cursor, text, *t)?
                }
                Step::Silent(d) => {
                    let before = snapshot(&shared).len();
                    std::thread::sleep(*d);
                    let after = snapshot(&shared);
                    if after.len() != before {
                        return Err(HarnessError::NotSilent {
                            output: String::from_utf8_lossy(&after[before..]).into_owned(),
                        });
                    }
                }
                Step::Sleep(d) => std::thread::sleep(*d),
                Step::Eof => writer.write_all(&[0x04]).map_err(setup)?,
            }
            writer.flush().map_err(setup)?;
        }
        Ok(())
    })();

    let exit = match &result {
        Ok(()) => wait_exit(&mut *child, session.expect_timeout),
        Err(_) => None,
    };
    if exit.is_none() {
        let _ = child.kill();
        let _ = child.wait();
    }
    drop(writer);
    wait_closed(&shared, Duration::from_millis(500));
    drop(pair.master);
    if shared.0.lock().map(|o| o.closed).unwrap_or(true) {
        let _ = reader_thread.join();
    }
    result?;

    let transcript = snapshot(&shared);
    if let Some(signal) = exit.as_ref().and_then(|e| e.signal()) {
        return Err(HarnessError::HostCrashed {
            signal: signal.to_owned(),
            transcript: String::from_utf8_lossy(&transcript).into_owned(),
        });
    }
    Ok(PtyOutcome {
        transcript,
        exit,
        recordings: session
            .recorder
            .as_ref()
            .map(Recorder::exchanges)
            .unwrap_or_default(),
        hotkeys,
    })
}

fn expect(
    shared: &Shared,
    child: &mut (dyn portable_pty::Child + Send + Sync),
    cursor: usize,
    needle: &str,
    timeout: Duration,
) -> Result<usize, HarnessError> {
    let deadline = Instant::now() + timeout;
    let (lock, cvar) = &**shared;
    let mut out = lock.lock().unwrap_or_else(|e| e.into_inner());
    loop {
        if let Some(pos) = find(&out.bytes[cursor.min(out.bytes.len())..], needle.as_bytes()) {
            return Ok(cursor + pos + needle.len());
        }
        let now = Instant::now();
        if now >= deadline || out.closed {
            let transcript = String::from_utf8_lossy(&out.bytes).into_owned();
            drop(out);
            if let Ok(Some(status)) = wait_briefly(child) {
                if let Some(signal) = status.signal() {
                    return Err(HarnessError::HostCrashed {
                        signal: signal.to_owned(),
                        transcript,
                    });
                }
            }
            return Err(HarnessError::ExpectTimeout {
                expected: needle.to_owned(),
                transcript,
            });
        }
        out = cvar
            .wait_timeout(out, deadline - now)
            .unwrap_or_else(|e| e.into_inner())
            .0;
    }
}

fn wait_briefly(
    child: &mut (dyn portable_pty::Child + Send + Sync),
) -> std::io::Result<Option<ExitStatus>> {
    let deadline = Instant::now() + Duration::from_millis(200);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if Instant::now() >= deadline {
            return Ok(None);
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

fn wait_exit(
    child: &mut (dyn portable_pty::Child + Send + Sync),
    timeout: Duration,
) -> Option<ExitStatus> {
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
            _ => return None,
        }
    }
}

fn wait_closed(shared: &Shared, timeout: Duration) {
    let (lock, cvar) = &**shared;
    let out = lock.lock().unwrap_or_else(|e| e.into_inner());
    let _ = cvar.wait_timeout_while(out, timeout, |o| !o.closed);
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() {
        return Some(0);
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}
