//! Standalone mock chat-completions server.
//!
//! Prints its endpoint URL on the first line of standard output, then logs
//! one line per request to standard error until killed.

use std::path::PathBuf;
use std::time::Duration;

use aicli_testkit::mock::{self, MockRule};
use clap::Parser;

#[derive(Parser)]
#[command(
    name = "aicli-mock",
    about = "Scripted OpenAI-compatible completions server on loopback"
)]
struct Args {
    /// INI file with one section per rule.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Reply of the catch-all rule.
    #[arg(long, default_value = mock::DEFAULT_REPLY)]
    reply: String,
    /// Exit after this many requests.
    #[arg(long)]
    requests: Option<usize>,
}

fn main() {
    let args = Args::parse();
    let mut rules = match &args.rules {
        Some(path) => {
            let text = std::fs::read_to_string(path).unwrap_or_else(|e| {
                eprintln!("aicli-mock: {}: {e}", path.display());
                std::process::exit(2);
            });
            mock::rules_from_ini(&text).unwrap_or_else(|e| {
                eprintln!("aicli-mock: {}: {e}", path.display());
                std::process::exit(2);
            })
        }
        None => Vec::new(),
    };
    rules.push(MockRule::catch_all(args.reply));
    let server = mock::mock_serve(rules).unwrap_or_else(|e| {
        eprintln!("aicli-mock: {e}");
        std::process::exit(1);
    });
    println!("{}", server.endpoint());

    let mut seen = 0;
    loop {
        std::thread::sleep(Duration::from_millis(50));
        let recordings = server.recordings();
        for r in &recordings[seen..] {
            let prompt = r
                .request
                .as_ref()
                .map_or("<invalid request>", mock::last_user_message);
            eprintln!("aicli-mock: rule {} <- {prompt:?}", r.rule);
        }
        seen = recordings.len();
        if args.requests.is_some_and(|n| seen >= n) {
            break;
        }
    }
}
