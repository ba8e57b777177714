mod args;
mod commands;
mod output;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::Value;

use args::{Cli, Command, Format};
use commands::Failure;

fn emit(format: Format, report: &Value) {
    let text = match format {
        Format::Json => serde_json::to_string_pretty(report).expect("json") + "\n",
        Format::Table => output::table(report),
    };
    // A closed pipe downstream is not our failure.
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run { scenario, log, strict, params } => commands::run(scenario, log, *strict, params.as_deref()),
        Command::Check { log, scenario, strict, params } => {
            commands::check(log, scenario.as_deref(), *strict, params.as_deref())
        }
        Command::Nav { log, block, holdings, fx } => commands::nav(log, *block, *holdings, fx.as_deref()),
        Command::Reconcile { log, window, tolerance_bp } => commands::reconcile_window(log, *window, *tolerance_bp),
        Command::Serve { scenario, listen, strict, params, block_ms } => {
            commands::serve(scenario, *listen, *strict, params.as_deref(), *block_ms)
        }
    };
    match outcome {
        Ok(report) => {
            emit(cli.format, &report);
            ExitCode::SUCCESS
        }
        Err(Failure::Check(report)) => {
            emit(cli.format, &report);
            ExitCode::from(2)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
