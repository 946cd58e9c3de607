//! Offline test infrastructure: a scripted chat-completions mock server, a
//! pseudo-terminal harness that runs hosts with the shim preloaded, and an
//! optional system-call tracer.

pub mod mock;
pub mod pty;
pub mod trace;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, OnceLock};

pub use mock::{
    mock_serve, rules_from_ini, MockError, MockRule, MockServer, Pattern, RecordedExchange,
};
pub use pty::{pty_run, HarnessError, PtyOutcome, PtySession, Step};
pub use trace::{trace_syscalls, SyscallLog, TraceError};

/// Environment variable naming a prebuilt shim library.
pub const SHIM_ENV: &str = "AICLI_SHIM";

/// Root of the cargo workspace this crate belongs to.
pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("crate lives in <root>/crates/<name>")
        .to_path_buf()
}

/// Path to the preloadable shim.
///
/// Uses `$AICLI_SHIM` when set; otherwise builds the shim crate with cargo
/// into its own target directory, once per process.
pub fn shim_path() -> Result<PathBuf, String> {
    if let Some(path) = std::env::var_os(SHIM_ENV) {
        return Ok(PathBuf::from(path));
    }
    build_shim(&[])
}

/// Builds the shim with the given cargo features.
pub fn build_shim(features: &[&str]) -> Result<PathBuf, String> {
    type Builds = Vec<(String, Result<PathBuf, String>)>;
    static BUILT: OnceLock<Mutex<Builds>> = OnceLock::new();
    let key = features.join(",");
    let mut built = BUILT
        .get_or_init(Mutex::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    if let Some((_, result)) = built.iter().find(|(k, _)| *k == key) {
        return result.clone();
    }
    let result = run_cargo_build(features);
    built.push((key, result.clone()));
    result
}

fn run_cargo_build(features: &[&str]) -> Result<PathBuf, String> {
    let root = workspace_root();
    let suffix = if features.is_empty() {
        "default".to_owned()
    } else {
        features.join("-")
    };
    let target = root.join("target").join(format!("shim-{suffix}"));
    let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
    let mut cmd = Command::new(cargo);
    cmd.current_dir(&root)
        .args([
            "build",
            "--quiet",
            "--offline",
            "-p",
            "aicli-shim",
            "--target-dir",
        ])
        .arg(&target);
    if !features.is_empty() {
        cmd.arg("--features").arg(features.join(","));
    }
    let output = cmd.output().map_err(|e| format!("cannot run cargo: {e}"))?;
    if !output.status.success() {
        return Err(format!(
            "shim build failed:\n{}",
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    let lib = target.join("debug").join("libaicli_shim.so");
    if lib.is_file() {
        Ok(lib)
    } else {
        Err(format!("shim build produced no {}", lib.display()))
    }
}
