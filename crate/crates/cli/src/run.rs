//! Single propagation with its on-disk artifacts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use davydov::ensemble::{Checkpoint, EnsembleState};
use davydov::models::{Hamiltonian, Holstein, ModelSpec};
use davydov::observables::{autocorrelation, exciton_density, population_z, TimeSeries};
use davydov::propagator::{run, RunStatus};
use serde_json::{json, Value};

use crate::config::{build_model, LoadedConfig};
use crate::error::CliError;

pub const POPULATION: &str = "population.csv";
pub const DENSITY: &str = "density.csv";
pub const AUTOCORRELATION: &str = "autocorrelation.csv";
pub const CONSERVATION: &str = "conservation.csv";
pub const MODES: &str = "modes.csv";
pub const EVENTS: &str = "events.jsonl";
pub const DIAGNOSTICS: &str = "diagnostics.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub status: RunStatus,
    /// `P_z` for spin-boson, `rho_00` for Holstein, the norm otherwise.
    pub primary: TimeSeries,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// Opens `path` for writing, keeping the header and every earlier row whose
/// time column lies before `cut`.
fn reopen_csv(path: &Path, header: &[&str], cut: Option<f64>) -> Result<csv::Writer<File>, CliError> {
    let kept = match cut {
        Some(cut) if path.exists() => {
            let mut rdr = csv::Reader::from_path(path)?;
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let t: f64 = rec.get(0).and_then(|s| s.parse().ok()).unwrap_or(f64::INFINITY);
                if t < cut {
                    rows.push(rec);
                }
            }
            rows
        }
        _ => Vec::new(),
    };
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in &kept {
        w.write_record(r)?;
    }
    Ok(w)
}

fn reopen_jsonl(path: &Path, cut: Option<f64>) -> Result<BufWriter<File>, CliError> {
    let mut kept = Vec::new();
    if let (Some(cut), true) = (cut, path.exists()) {
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            let t = serde_json::from_str::<Value>(&line)
                .ok()
                .and_then(|v| v.get("time").and_then(Value::as_f64))
                .unwrap_or(f64::INFINITY);
            if t < cut {
                kept.push(line);
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for l in kept {
        writeln!(w, "{l}")?;
    }
    Ok(w)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn write_modes(dir: &Path, model: &ModelSpec) -> Result<(), CliError> {
    let mut w = csv_writer(&dir.join(MODES))?;
    let (label, second): (&str, Vec<f64>) = match model {
        ModelSpec::SpinBoson(m) => ("lambda", m.lambda.clone()),
        ModelSpec::Holstein(m) => ("lambda", m.lambda.clone()),
        ModelSpec::Harmonic(m) => ("drive", m.drive.clone()),
    };
    w.write_record(["j", "omega", label])?;
    for (j, (om, x)) in model.frequencies().iter().zip(&second).enumerate() {
        w.write_record([j.to_string(), fmt(*om), fmt(*x)])?;
    }
    w.flush()?;
    Ok(())
}

struct Observers {
    population: Option<csv::Writer<File>>,
    density: Option<csv::Writer<File>>,
    autocorr: Option<csv::Writer<File>>,
    primary: TimeSeries,
    error: Option<CliError>,
}

impl Observers {
    fn observe(&mut self, model: &ModelSpec, state: &EnsembleState) -> Result<(), CliError> {
        let t = fmt(state.time);
        match model {
            ModelSpec::SpinBoson(_) => {
                let pz = population_z(state)?;
                if let Some(w) = self.population.as_mut() {
                    w.write_record([t.as_str(), &fmt(pz)])?;
                }
                self.primary.times.push(state.time);
                self.primary.values.push(pz);
            }
            ModelSpec::Holstein(h) => {
                let n = h.sites();
                let rho = exciton_density(state);
                if let Some(w) = self.density.as_mut() {
                    for (i, r) in rho.iter().enumerate() {
                        w.write_record([t.as_str(), &Holstein::label(n, i).to_string(), &fmt(*r)])?;
                    }
                }
                if let Some(w) = self.autocorr.as_mut() {
                    let f = autocorrelation(state, h.start);
                    w.write_record([t.as_str(), &fmt(f.re), &fmt(f.im)])?;
                }
                self.primary.times.push(state.time);
                self.primary.values.push(rho[Holstein::index(n, 0)]);
            }
            ModelSpec::Harmonic(_) => {
                self.primary.times.push(state.time);
                self.primary.values.push(state.norm_squared());
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), CliError> {
        for w in [&mut self.population, &mut self.density, &mut self.autocorr].into_iter().flatten() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Runs the configuration into `dir`. With `resume`, continues from the
/// checkpoint and keeps earlier rows of the existing artifacts.
pub fn execute(loaded: &LoadedConfig, dir: &Path, resume: Option<(&Path, Checkpoint)>) -> Result<RunSummary, CliError> {
    let cfg = &loaded.config;
    let model = build_model(&cfg.model)?;
    std::fs::create_dir_all(dir)?;
    let (initial, cut, resumed_from) = match resume {
        Some((path, ck)) => {
            let state = ck.into_state()?;
            let span = cfg.integrator.t_final.abs().max(1.0);
            let cut = state.time - 1e-12 * span;
            let from = json!({ "checkpoint": path.display().to_string(), "time": state.time });
            (state, Some(cut), from)
        }
        None => (cfg.initial_state(&model)?, None, Value::Null),
    };
    write_modes(dir, &model)?;

    let mut obs = Observers {
        population: None,
        density: None,
        autocorr: None,
        primary: TimeSeries::default(),
        error: None,
    };
    let mut artifacts = vec![MODES, CONSERVATION, EVENTS, CHECKPOINT];
    match &model {
        ModelSpec::SpinBoson(_) => {
            obs.population = Some(reopen_csv(&dir.join(POPULATION), &["t", "P_z"], cut)?);
            artifacts.push(POPULATION);
        }
        ModelSpec::Holstein(_) => {
            obs.density = Some(reopen_csv(&dir.join(DENSITY), &["t", "n", "rho_nn"], cut)?);
            obs.autocorr = Some(reopen_csv(&dir.join(AUTOCORRELATION), &["t", "re", "im"], cut)?);
            artifacts.extend([DENSITY, AUTOCORRELATION]);
        }
        ModelSpec::Harmonic(_) => {}
    }
    let mut conservation = reopen_csv(&dir.join(CONSERVATION), &["t", "norm2", "energy"], cut)?;
    let mut diagnostics = if cfg.output.diagnostics {
        artifacts.push(DIAGNOSTICS);
        Some(reopen_jsonl(&dir.join(DIAGNOSTICS), cut)?)
    } else {
        None
    };

    let prop = cfg.propagation(dir);
    let clock = Instant::now();
    let out = run(initial, &model, &prop, &mut |state| {
        if obs.error.is_none() {
            if let Err(e) = obs.observe(&model, state) {
                obs.error = Some(e);
            }
        }
    });
    let wall = clock.elapsed().as_secs_f64();
    obs.flush()?;
    let out = out?;
    if let Some(e) = obs.error.take() {
        return Err(e);
    }

    for s in &out.samples {
        conservation.write_record([fmt(s.time), fmt(s.norm_squared), fmt(s.energy)])?;
    }
    conservation.flush()?;
    if let Some(w) = diagnostics.as_mut() {
        for d in &out.diagnostics {
            serde_json::to_writer(&mut *w, d)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    let mut events = BufWriter::new(File::create(dir.join(EVENTS))?);
    for e in out.events() {
        serde_json::to_writer(&mut events, e)?;
        writeln!(events)?;
    }
    if let RunStatus::Aborted { time, kind, reason } = &out.status {
        serde_json::to_writer(&mut events, &json!({ "abort": { "time": time, "kind": kind, "reason": reason } }))?;
        writeln!(events)?;
    }
    events.flush()?;
    out.final_state.to_checkpoint().write(&dir.join(CHECKPOINT))?;

    artifacts.push(MANIFEST);
    let manifest = json!({
        "manifest_version": 1,
        "program": "davydov",
        "version": env!("CARGO_PKG_VERSION"),
        "command": if cut.is_some() { "resume" } else { "run" },
        "config": loaded.value,
        "resumed_from": resumed_from,
        "status": out.status,
        "stats": out.stats,
        "events": out.events().len(),
        "wall_seconds": wall,
        "artifacts": artifacts,
    });
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;

    Ok(RunSummary {
        dir: dir.to_path_buf(),
        status: out.status,
        primary: obs.primary,
    })
}

/// Turns an aborted run into the matching error after its outputs exist.
pub fn check_status(summary: &RunSummary) -> Result<(), CliError> {
    match &summary.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Aborted { time, reason, .. } => Err(CliError::Aborted {
            time: *time,
            reason: reason.clone(),
        }),
    }
}
