use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use iqcloc_cli::{run, Command, Flags};

/// Localized IQC analysis and synthesis of interconnected LTI systems.
#[derive(Debug, Parser)]
#[command(name = "iqcloc", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Problem file (a report for `validate`).
    input: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    flags: Flags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(cli.command, &cli.input, &cli.flags) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let text = report.to_json();
    match &cli.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{text}"),
    }
    if let Some(msg) = &report.message {
        eprintln!("{msg}");
    }
    ExitCode::from(report.status.exit_code() as u8)
}
