mod commands;
mod error;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use error::CliError;
use settings::{Flags, Settings};

/// Sparse-annotation monocular 3D detection toolkit.
#[derive(Debug, Parser)]
#[command(name = "sparsemono", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut object patches for road-aware augmentation
    ExtractPatches(Flags),
    /// Paste library patches into scenes for one epoch
    Augment(Flags),
    /// Build prototype banks from sparse ground-truth features
    ProtoInit(Flags),
    /// Select pseudo-labels from teacher predictions and update the GT Bank
    Filter(Flags),
    /// AP_R40 of scored label files against ground truth
    Eval(Flags),
    /// Run the synthetic teacher-student experiment
    Simulate(Flags),
    /// GT Bank growth per epoch
    Report(Flags),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ExtractPatches(f) => commands::extract_patches(&Settings::load(f)?),
        Command::Augment(f) => commands::augment(&Settings::load(f)?),
        Command::ProtoInit(f) => commands::proto_init(&Settings::load(f)?),
        Command::Filter(f) => commands::filter(&Settings::load(f)?),
        Command::Eval(f) => commands::eval(&Settings::load(f)?),
        Command::Simulate(f) => commands::simulate(&Settings::load(f)?),
        Command::Report(f) => commands::report(&Settings::load(f)?),
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run with --help for usage");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
