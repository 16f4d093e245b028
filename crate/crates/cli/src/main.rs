use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::filter::LevelFilter;
use unison_cli::{exit, parse_invocation, CommandArgs};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();

    // first pass only to locate the config file; full validation follows
    let config_path = match unison_cli::Cli::try_parse_from(std::iter::once("unison".to_string()).chain(argv.iter().cloned())) {
        Ok(cli) => match cli.command {
            CommandArgs::Run(a) | CommandArgs::Scenario { run: a, .. } | CommandArgs::Check { run: a, .. } => a.config,
        },
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    let config_bytes = match config_path.as_deref().map(std::fs::read).transpose() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("usage error:\n  config file: {e}");
            return ExitCode::from(exit::USAGE as u8);
        }
    };

    let config = match parse_invocation(&argv, config_bytes.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(exit::USAGE as u8);
        }
    };
    let level = match config.verbose {
        0 => LevelFilter::WARN,
        1 => LevelFilter::INFO,
        2 => LevelFilter::DEBUG,
        _ => LevelFilter::TRACE,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    ExitCode::from(unison_cli::execute(&config) as u8)
}
