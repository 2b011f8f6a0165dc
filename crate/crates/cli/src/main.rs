//! `davydov`: runs, convergence sweeps, resumption and spectra.

mod config;
mod error;
mod run;
mod spectrum;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use davydov::ensemble::Checkpoint;

use crate::error::CliError;
use crate::sweep::Axis;

#[derive(Parser)]
#[command(name = "davydov", version, about = "Multi-D2 coherent-state dynamics with apoptosis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate one configuration and write its artifacts.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set model.alpha=0.05`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (same as `--set output.directory=...`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one config for several values of a parameter and tabulate the
    /// error measure against the largest value.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue a run from its checkpoint; the manifest next to it supplies
    /// the configuration.
    Resume {
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Absorption spectrum and Poisson fit from a Holstein run directory.
    Spectrum {
        run_dir: PathBuf,
        #[arg(long)]
        damping: Option<f64>,
        #[arg(long)]
        padding: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn with_out(mut overrides: Vec<String>, out: &Option<PathBuf>) -> Vec<String> {
    if let Some(dir) = out {
        overrides.push(format!("output.directory={}", dir.display()));
    }
    overrides
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, overrides, out } => {
            let loaded = config::load(&config, &with_out(overrides, &out))?;
            let dir = loaded.config.run_dir(&config);
            let summary = run::execute(&loaded, &dir, None)?;
            println!("{}", summary.dir.display());
            run::check_status(&summary)
        }
        Command::Sweep {
            config,
            axis,
            values,
            overrides,
            out,
        } => {
            let base = config::load(&config, &overrides)?;
            let dir = out.unwrap_or_else(|| base.config.run_dir(&config).join("sweep"));
            let rows = sweep::sweep(&config, &overrides, axis, &values, &dir)?;
            for r in &rows {
                let d = r.delta.map_or("nan".to_string(), |d| format!("{d:.6e}"));
                println!("{:>10} {:>14} {}", r.value, d, r.status);
            }
            println!("{}", dir.join(sweep::SWEEP_CSV).display());
            if rows.iter().all(|r| r.status == "completed") {
                Ok(())
            } else {
                Err(CliError::Aborted {
                    time: f64::NAN,
                    reason: "at least one sweep run did not complete".into(),
                })
            }
        }
        Command::Resume { checkpoint, overrides } => {
            let dir = checkpoint
                .parent()
                .map(|p| if p.as_os_str().is_empty() { PathBuf::from(".") } else { p.to_path_buf() })
                .unwrap_or_else(|| PathBuf::from("."));
            let loaded = config::load(&dir.join(run::MANIFEST), &overrides)?;
            let ck = Checkpoint::read(&checkpoint)?;
            let summary = run::execute(&loaded, &dir, Some((&checkpoint, ck)))?;
            println!("{}", summary.dir.display());
            run::check_status(&summary)
        }
        Command::Spectrum {
            run_dir,
            damping,
            padding,
            threshold,
        } => {
            let report = spectrum::spectrum(&run_dir, damping, padding, threshold)?;
            println!(
                "S = {:.4}  fitted lambda = {:.4}  bands = {}  negative weight = {:.3e}",
                report.huang_rhys,
                report.fit.lambda,
                report.fit.areas.len(),
                report.negative_fraction
            );
            println!("{}", run_dir.join(spectrum::SPECTRUM_CSV).display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
