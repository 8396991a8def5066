//! `ntk-spectra`: desk-scale experiment runner for Jacobian/NTK spectrum
//! analysis of one-hidden-layer networks.
//!
//! Usage: `ntk-spectra <command> [--config FILE] [--seed N] [--out DIR]`.
//! Each command reads an optional JSON config (with a matching `command`
//! field), applies the CLI overrides, validates everything up front, and
//! writes CSV/JSON outputs. Exit codes: 0 success, 2 invalid
//! configuration, 3 numerical failure.

mod commands;
mod config;
mod error;
mod io;

use clap::Parser;
use config::Command;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ntk-spectra",
    about = "Jacobian/NTK spectrum experiments for shallow networks",
    disable_help_subcommand = true
)]
struct Cli {
    /// One of: linear-demo, gmm-spectrum, train-track, corrupt-sweep,
    /// meta-verify, bound-eval, kernel-check.
    command: String,
    /// JSON config file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<String>,
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let command = Command::parse(&cli.command)?;
    let path = cli.config.as_deref();
    match command {
        Command::LinearDemo => {
            let cfg = config::load(command, path, cli.seed, cli.out.clone())?;
            commands::linear_demo::run(&cfg)
        }
        Command::GmmSpectrum => {
            let cfg = config::load(command, path, cli.seed, cli.out.clone())?;
            commands::gmm_spectrum::run(&cfg)
        }
        Command::TrainTrack => {
            let cfg = config::load(command, path, cli.seed, cli.out.clone())?;
            commands::train_track::run(&cfg)
        }
        Command::CorruptSweep => {
            let cfg = config::load(command, path, cli.seed, cli.out.clone())?;
            commands::corrupt_sweep::run(&cfg)
        }
        Command::MetaVerify => {
            let cfg = config::load(command, path, cli.seed, cli.out.clone())?;
            commands::meta_verify::run(&cfg)
        }
        Command::BoundEval => {
            let cfg = config::load(command, path, cli.seed, cli.out.clone())?;
            commands::bound_eval::run(&cfg)
        }
        Command::KernelCheck => {
            let cfg = config::load(command, path, cli.seed, cli.out.clone())?;
            commands::kernel_check::run(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
