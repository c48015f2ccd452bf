//! Configuration-driven command-line front end for the effdyn toolkit.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical-invariant failure,
//! 64 unknown subcommand / usage error.

mod config;
mod run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::Config;
use run::RunContext;

#[derive(Parser)]
#[command(
    name = "effdyn",
    version,
    about = "Transfer-operator toolkit: build Markov models of toy systems, \
             analyze spectra, committors and rates, and optimize collective variables"
)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts (created if missing).
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scans; EFFDYN_THREADS is the fallback.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Turn any failing tolerance verdict into exit code 3.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the transition model and write it with its stationary vector.
    BuildOperator,
    /// Eigenvalues, eigenvectors, and implied timescales.
    Spectrum,
    /// Committor between the configured sets.
    Committor,
    /// Transition rates by flux, energy, and (optionally) trajectory counts.
    Rates,
    /// Effective (reduced) model under the configured assignment.
    Effective,
    /// Eigenvalue and rate comparison between full and effective dynamics.
    Compare,
    /// Scan a CV family under the configured objective.
    OptimizeCv,
    /// Detailed-balance check of the Langevin position marginal.
    LangevinCheck,
    /// Run the whole invariant suite and write a report.
    VerifyAll,
    /// Write a named built-in fixture as model artifacts.
    Fixtures {
        /// One of: 2st, bd3, bd4, cycle3, biased-cycle3.
        name: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems exit 64; --help/--version print and exit 0
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                effdyn::Error::Invariant(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: Cli) -> effdyn::Result<i32> {
    let needs_config = !matches!(cli.command, Command::Fixtures { .. } | Command::VerifyAll);
    let (config, config_bytes) = match &cli.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| {
                effdyn::Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            (Config::from_path(path)?, bytes)
        }
        None if needs_config => {
            return Err(effdyn::Error::Config("--config <path> is required".into()));
        }
        None => (default_config(), Vec::new()),
    };
    std::fs::create_dir_all(&cli.out)?;
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("EFFDYN_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    let ctx = RunContext {
        seed: cli.seed.unwrap_or(config.seed),
        config,
        config_bytes,
        out_dir: cli.out.clone(),
        threads,
        strict: cli.strict,
    };
    match cli.command {
        Command::BuildOperator => run::cmd_build_operator(&ctx),
        Command::Spectrum => run::cmd_spectrum(&ctx),
        Command::Committor => run::cmd_committor(&ctx),
        Command::Rates => run::cmd_rates(&ctx),
        Command::Effective => run::cmd_effective(&ctx),
        Command::Compare => run::cmd_compare(&ctx),
        Command::OptimizeCv => run::cmd_optimize_cv(&ctx),
        Command::LangevinCheck => run::cmd_langevin_check(&ctx),
        Command::VerifyAll => verify::cmd_verify_all(&ctx),
        Command::Fixtures { name } => run::cmd_fixture(&ctx, &name),
    }
}

fn default_config() -> Config {
    serde_json::from_str("{}").expect("empty config is valid")
}
