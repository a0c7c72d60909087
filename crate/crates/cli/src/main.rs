//! `crossglg` command-line entry point.
//!
//! Success prints one JSON summary line on stdout. Failure prints one JSON
//! line `{"status":"error","kind":...,"message":...}` on stderr and exits
//! with 2 for usage errors and 1 otherwise.

mod args;
mod commands;
mod config;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::{json, Value};

use args::Cli;

#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

impl From<crossglg::Error> for Failure {
    fn from(e: crossglg::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

fn fail(f: &Failure) -> ExitCode {
    let line = json!({"status": "error", "kind": f.kind, "message": f.message});
    eprintln!("{line}");
    ExitCode::from(if f.kind == "usage" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(&Failure::usage(first));
        }
    };
    match commands::run(cli) {
        Ok(summary) => {
            let mut out = json!({"status": "ok"});
            if let (Value::Object(o), Value::Object(s)) = (&mut out, summary) {
                o.extend(s);
            }
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => fail(&f),
    }
}
