mod args;
mod commands;
mod config;
mod data;
mod failure;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use failure::{CliResult, Failure};

pub(crate) fn parse(argv: &[String]) -> Result<args::Cli, clap::Error> {
    args::Cli::try_parse_from(std::iter::once("dualcse".to_string()).chain(argv.iter().cloned()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
