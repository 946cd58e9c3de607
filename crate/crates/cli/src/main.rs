use std::io::{Read, Write};
use std::path::PathBuf;

use aicli_cli::{exit, run, CliInvocation};
use aicli_core::config::ProcessEnv;
use clap::Parser;

/// Translate a natural-language request into a command line.
///
/// Prints only the command on standard output, so `$(nl2cmd ...)` works.
/// Reads the request from standard input when no words are given.
#[derive(Parser)]
#[command(name = "nl2cmd", version)]
struct Args {
    /// Program whose command language to answer in.
    #[arg(long, default_value = "bash")]
    program: String,
    /// A previously entered command, oldest first (repeatable). Only the
    /// last `history_context` lines are sent.
    #[arg(long, value_name = "LINE")]
    context: Vec<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Chat-completions URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Extra configuration file, read last.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print token usage and estimated cost on standard error.
    #[arg(long)]
    cost: bool,
    /// The request.
    prompt: Vec<String>,
}

fn main() {
    let args = Args::parse();
    let prompt = if args.prompt.is_empty() {
        let mut text = String::new();
        if let Err(e) = std::io::stdin().read_to_string(&mut text) {
            eprintln!("nl2cmd: cannot read standard input: {e}");
            std::process::exit(exit::CONFIG);
        }
        text.trim().to_owned()
    } else {
        args.prompt.join(" ")
    };
    let inv = CliInvocation {
        program: args.program,
        prompt,
        context: args.context,
        show_cost: args.cost,
        endpoint: args.endpoint,
        model: args.model,
        temperature: args.temperature,
        config: args.config,
    };
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("/"));
    let out = run(&inv, &ProcessEnv, &cwd);
    let _ = std::io::stdout().write_all(out.stdout.as_bytes());
    let _ = std::io::stderr().write_all(out.stderr.as_bytes());
    std::process::exit(out.status);
}
