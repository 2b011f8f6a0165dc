//! Convergence sweeps over one parameter, run on a bounded thread pool.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::ValueEnum;
use davydov::observables::error_measure;

use crate::config::{self, ModelConfig};
use crate::error::CliError;
use crate::run::{execute, RunSummary};

pub const WORKERS_ENV: &str = "DAVYDOV_WORKERS";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Multiplicity.
    M,
    /// Number of modes (spin-boson) or sites (Holstein).
    N,
    /// Spin-boson coupling strength.
    Alpha,
}

impl Axis {
    fn key(self, model: &ModelConfig) -> Result<&'static str, CliError> {
        Ok(match (self, model) {
            (Axis::M, _) => "multiplicity",
            (Axis::N, ModelConfig::SpinBoson(_)) => "model.modes",
            (Axis::N, ModelConfig::Holstein(_)) => "model.sites",
            (Axis::Alpha, ModelConfig::SpinBoson(_)) => "model.alpha",
            _ => return Err(CliError::Usage(format!("axis {self:?} does not apply to this model"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Axis::M => "M",
            Axis::N => "N",
            Axis::Alpha => "alpha",
        }
    }
}

/// Pool size from the environment, at least one.
pub fn worker_count(jobs: usize) -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    let n = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .unwrap_or(default);
    n.clamp(1, jobs.max(1))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    /// `None` when the run, or the reference, did not complete.
    pub delta: Option<f64>,
    pub status: &'static str,
}

/// Runs every value into `dir/<axis>_<value>` and tabulates the error
/// measure of the primary observable against the largest value.
pub fn sweep(
    source: &Path,
    overrides: &[String],
    axis: Axis,
    values: &[f64],
    dir: &Path,
) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let base = config::load(source, overrides)?;
    let key = axis.key(&base.config.model)?;
    let integer = !matches!(axis, Axis::Alpha);
    let mut jobs = Vec::new();
    for &v in values {
        if integer && (v.fract() != 0.0 || v < 1.0) {
            return Err(CliError::Usage(format!("axis {} takes positive integers, got {v}", axis.name())));
        }
        let text = if integer { format!("{}", v as u64) } else { format!("{v}") };
        let mut ov = overrides.to_vec();
        ov.push(format!("{key}={text}"));
        let loaded = config::load(source, &ov)?;
        jobs.push((v, loaded, dir.join(format!("{}_{text}", axis.name()))));
    }
    std::fs::create_dir_all(dir)?;

    let results: Mutex<Vec<Option<Result<RunSummary, CliError>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, loaded, run_dir)) = jobs.get(i) else { break };
                let r = execute(loaded, run_dir, None);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results: Vec<Result<RunSummary, CliError>> = results.into_inner().unwrap().into_iter().map(Option::unwrap).collect();

    let reference = (0..jobs.len())
        .max_by(|&a, &b| jobs[a].0.partial_cmp(&jobs[b].0).unwrap())
        .unwrap();
    let mut rows = Vec::new();
    let reference_ok = matches!(&results[reference], Ok(s) if s.status.is_completed());
    for (i, (v, _, _)) in jobs.iter().enumerate() {
        let (delta, status) = match &results[i] {
            Err(e) => {
                eprintln!("{} = {v}: {e}", axis.name());
                (None, "failed")
            }
            Ok(s) if !s.status.is_completed() => (None, "aborted"),
            Ok(s) if reference_ok => {
                let r = results[reference].as_ref().unwrap();
                (Some(error_measure(&r.primary, &s.primary)?), "completed")
            }
            Ok(_) => (None, "completed"),
        };
        rows.push(SweepRow {
            value: *v,
            delta,
            status,
        });
    }
    write_table(&dir.join(SWEEP_CSV), &rows)?;
    Ok(rows)
}

fn write_table(path: &PathBuf, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(["value", "delta", "status"])?;
    for r in rows {
        let d = r.delta.map_or_else(|| "nan".to_string(), |d| format!("{d}"));
        w.write_record([format!("{}", r.value), d, r.status.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
