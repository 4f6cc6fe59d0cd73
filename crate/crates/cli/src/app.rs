//! Argument parsing and dispatch for the `rmc` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, render_checks, RunOptions};
use crate::CliError;

#[derive(Parser)]
#[command(name = "rmc", version, about = "Continuous robust control of uncertain MIMO plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its CSV log plus a plotting script.
    Run {
        /// Scenario file; omit with --batch.
        #[arg(required_unless_present = "batch")]
        config: Option<PathBuf>,
        /// Output CSV (default: <config stem>.csv; RMC_LOG_DIR replaces the directory).
        #[arg(short, long, conflicts_with = "batch")]
        output: Option<PathBuf>,
        /// Write positional columns in degrees.
        #[arg(long)]
        deg: bool,
        /// Run every *.cfg in this directory concurrently.
        #[arg(long, conflicts_with = "config")]
        batch: Option<PathBuf>,
    },
    /// Check alpha and, given bounds, the per-channel C condition.
    CheckGains {
        config: PathBuf,
        /// Bound estimates file.
        #[arg(long, conflicts_with = "estimate")]
        bounds: Option<PathBuf>,
        /// Estimate bounds from a run of the scenario.
        #[arg(long)]
        estimate: bool,
    },
    /// Print the S, D, U factors of a square matrix file.
    Decompose { matrix: PathBuf },
    /// Recompute V1, L, P, V and the invariant checks on a logged run.
    Analyze {
        config: PathBuf,
        log: PathBuf,
        /// Per-sample diagnostics CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn verdict(pass: bool) -> u8 {
    if pass {
        0
    } else {
        1
    }
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run {
            config,
            output,
            deg,
            batch,
        } => {
            let opts = RunOptions::from_env(output, deg);
            if let Some(dir) = batch {
                let mut code = 0u8;
                for (cfg, res) in commands::run_batch(&dir, &opts)? {
                    match res {
                        Ok(summary) => print!("{}", summary.render()),
                        Err(e) => {
                            eprintln!("{}: {e}", cfg.display());
                            code = code.max(e.exit_code() as u8);
                        }
                    }
                }
                return Ok(code);
            }
            let config = config.expect("clap requires a config without --batch");
            print!("{}", commands::run_config(&config, &opts)?.render());
            Ok(0)
        }
        Command::CheckGains {
            config,
            bounds,
            estimate,
        } => {
            let report = commands::check_gains(&config, bounds.as_deref(), estimate)?;
            for n in &report.notes {
                println!("  {n}");
            }
            print!("{}", render_checks(&report.checks));
            Ok(verdict(report.pass()))
        }
        Command::Decompose { matrix } => {
            print!("{}", commands::render_sdu(&commands::decompose(&matrix)?));
            Ok(0)
        }
        Command::Analyze { config, log, output } => {
            let report = commands::analyze(&config, &log, output.as_deref())?;
            println!("{}: {} samples", log.display(), report.samples);
            print!("{}", render_checks(&report.checks()));
            Ok(verdict(report.pass()))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 ok, 1 rejected input or failed check, 2 runtime
/// failure.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version go to stdout; anything else is rejected input
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}
