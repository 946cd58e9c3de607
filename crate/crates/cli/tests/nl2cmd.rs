//! The `nl2cmd` binary against the mock server.

use std::io::Write;
use std::process::{Command, Output, Stdio};

use aicli_core::chat::Role;
use aicli_testkit::mock::{mock_serve, MockRule, MockServer};
use tempfile::TempDir;

struct Fixture {
    mock: MockServer,
    home: TempDir,
}

impl Fixture {
    fn new(rules: Vec<MockRule>) -> Self {
        Self {
            mock: mock_serve(rules).unwrap(),
            home: TempDir::new().unwrap(),
        }
    }

    fn command(&self, key: Option<&str>) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nl2cmd"));
        cmd.env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("HOME", self.home.path())
            .current_dir(self.home.path())
            .args(["--endpoint", &self.mock.endpoint()]);
        if let Some(key) = key {
            cmd.env("OPENAI_API_KEY", key);
        }
        cmd
    }

    fn run(&self, args: &[&str]) -> Output {
        self.command(Some("sk-test")).args(args).output().unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prints_completion() {
    let f = Fixture::new(vec![MockRule::contains("running", "uptime")]);
    let out = f.run(&[
        "--program",
        "bash",
        "How long has the computer been running?",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "uptime\n");
    assert!(stderr(&out).is_empty());
    let rec = f.mock.recordings();
    assert_eq!(rec[0].authorization.as_deref(), Some("Bearer sk-test"));
    let req = rec[0].request.as_ref().unwrap();
    assert_eq!(
        req.messages.last().unwrap().content,
        "How long has the computer been running?"
    );
}

#[test]
fn words_are_joined_and_stdin_is_read() {
    let f = Fixture::new(vec![MockRule::exact("show disk usage", "df -h")]);
    assert_eq!(stdout(&f.run(&["show", "disk", "usage"])), "df -h\n");

    let mut child = f
        .command(Some("k"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"show disk usage\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(stdout(&out), "df -h\n");
}

#[test]
fn output_is_deterministic() {
    let f = Fixture::new(vec![MockRule::catch_all(
        "find . -name '*.rs' | xargs wc -l",
    )]);
    let a = f.run(&["count lines of rust"]);
    let b = f.run(&["count lines of rust"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(
        f.mock.recordings()[0].raw_body,
        f.mock.recordings()[1].raw_body
    );
}

#[test]
fn context_and_program_shape_the_request() {
    let f = Fixture::new(Vec::new());
    let out = f.run(&[
        "--program",
        "gdb",
        "--context",
        "break main",
        "--context",
        "run",
        "show the stack",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let req = f.mock.recordings()[0].request.clone().unwrap();
    assert!(req.messages[0].content.contains("gdb"));
    let n = req.messages.len();
    let tail: Vec<_> = req.messages[n - 3..]
        .iter()
        .map(|m| (m.role, m.content.as_str()))
        .collect();
    assert_eq!(
        tail,
        [
            (Role::User, "break main"),
            (Role::User, "run"),
            (Role::User, "show the stack")
        ]
    );
}

#[test]
fn cost_flag_reports_usage() {
    let f = Fixture::new(vec![MockRule::catch_all("uptime").with_usage(167, 1)]);
    let out = f.run(&["--cost", "How long has the computer been running?"]);
    assert_eq!(stdout(&out), "uptime\n");
    assert!(
        stderr(&out).contains("167 prompt + 1 completion = 168 tokens"),
        "{}",
        stderr(&out)
    );
    assert!(stderr(&out).contains("$0.0002525"));
}

#[test]
fn empty_prompt_is_usage_error() {
    let f = Fixture::new(Vec::new());
    let out = f.run(&["   "]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("usage"));
    assert!(f.mock.recordings().is_empty());
}

#[test]
fn missing_key_exits_3() {
    let f = Fixture::new(Vec::new());
    let out = f.command(None).arg("list files").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("OPENAI_API_KEY"));
    assert!(f.mock.recordings().is_empty());
}

#[test]
fn server_error_exits_4_with_message() {
    let f = Fixture::new(vec![
        MockRule::catch_all("").with_error(429, "Rate limit reached for requests")
    ]);
    let out = f.run(&["list files"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stdout(&out).is_empty());
    assert!(stderr(&out).contains("Rate limit reached for requests"));
}

#[test]
fn bad_overrides_and_config_exit_2() {
    let f = Fixture::new(Vec::new());
    assert_eq!(f.run(&["--temperature", "7", "x"]).status.code(), Some(2));
    assert_eq!(
        f.run(&["--temperature", "warm", "x"]).status.code(),
        Some(2)
    );
    let conf = f.home.path().join("bad.conf");
    std::fs::write(&conf, "[general]\ntimeout_ms = never\n").unwrap();
    let out = f.run(&["--config", conf.to_str().unwrap(), "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("timeout_ms"));
}

#[test]
fn config_file_supplies_key_and_profile() {
    let f = Fixture::new(Vec::new());
    let conf = f.home.path().join("c.conf");
    std::fs::write(
        &conf,
        "[auth]\napi_key = sk-from-file\n\n[prompt-awk]\nsystem = You write awk programs.\nuser-1 = sum column 2\nassistant-1 = { s += $2 } END { print s }\n",
    )
    .unwrap();
    let out = f
        .command(None)
        .args([
            "--config",
            conf.to_str().unwrap(),
            "--program",
            "awk",
            "print line numbers",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rec = &f.mock.recordings()[0];
    assert_eq!(rec.authorization.as_deref(), Some("Bearer sk-from-file"));
    let req = rec.request.as_ref().unwrap();
    assert!(req.messages[0]
        .content
        .starts_with("You write awk programs."));
    assert_eq!(req.messages[2].content, "{ s += $2 } END { print s }");
}
