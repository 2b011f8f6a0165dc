//! Run configuration: JSON schema, dotted-path overrides and model setup.

use std::path::{Path, PathBuf};

use davydov::apoptosis::ApoptosisPolicy;
use davydov::ensemble::{build_initial_state, EnsembleState, InitialSettings};
use davydov::linsys::{LinearSettings, Regularization, Strategy};
use davydov::models::{HarmonicBath, Hamiltonian, Holstein, HolsteinParams, ModelSpec, SpinBoson, SpinBosonParams};
use davydov::propagator::{CheckpointPolicy, IntegratorConfig, PropagationConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    SpinBoson(SpinBosonParams),
    Holstein(HolsteinParams),
    Harmonic(HarmonicBath),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default = "d_noise")]
    pub noise: f64,
    #[serde(default = "d_grid")]
    pub grid_spacing: f64,
    #[serde(default = "d_min_distance")]
    pub min_distance: f64,
}

fn d_noise() -> f64 {
    1e-6
}
fn d_grid() -> f64 {
    1.0
}
fn d_min_distance() -> f64 {
    0.05
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            noise: d_noise(),
            grid_spacing: d_grid(),
            min_distance: d_min_distance(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "d_rcond")]
    pub rcond_floor: f64,
    /// Keep mirror-symmetric starts of symmetric models exactly symmetric.
    #[serde(default = "d_true")]
    pub symmetrize: bool,
}

fn d_rcond() -> f64 {
    f64::EPSILON
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategy: Strategy::Auto,
            rcond_floor: d_rcond(),
            symmetrize: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory; defaults to `runs/<config file stem>`.
    #[serde(default)]
    pub directory: Option<PathBuf>,
    /// Period of intermediate checkpoints in model time units.
    #[serde(default)]
    pub checkpoint_period: Option<f64>,
    #[serde(default = "d_true")]
    pub diagnostics: bool,
}

fn d_true() -> bool {
    true
}

/// Post-processing defaults for `spectrum`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Exponential window time; defaults to a fifth of the run horizon.
    #[serde(default)]
    pub damping: Option<f64>,
    #[serde(default = "d_padding")]
    pub padding: usize,
    /// Relative height above which the first band starts.
    #[serde(default = "d_threshold")]
    pub threshold: f64,
}

fn d_padding() -> usize {
    8
}
fn d_threshold() -> f64 {
    0.05
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            damping: None,
            padding: d_padding(),
            threshold: d_threshold(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub multiplicity: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub apoptosis: ApoptosisPolicy,
    #[serde(default)]
    pub regularization: Regularization,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
}

/// A configuration together with the JSON it was parsed from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub value: Value,
}

fn schema_error(source: &Path, err: serde_path_to_error::Error<serde_json::Error>, anchored: bool) -> CliError {
    let path = err.path().to_string();
    let inner = err.into_inner();
    let key = if path == "." { String::new() } else { format!("{path}: ") };
    let msg = strip_position(&inner.to_string());
    if anchored && inner.line() > 0 {
        CliError::Config(format!("{}:{}:{}: {key}{msg}", source.display(), inner.line(), inner.column()))
    } else {
        CliError::Config(format!("{}: {key}{msg} (after --set overrides)", source.display()))
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Sets `path` (dot separated) inside `root`, creating objects on the way.
/// The value is parsed as JSON and falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("override path `{path}` has an empty component")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Usage(format!("override `{path}` descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("override `{path}` descends into a non-object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a config file, or a manifest written by a previous run, and applies
/// overrides.
pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("{}:{}:{}: {}", path.display(), e.line(), e.column(), strip_position(&e.to_string())))
    })?;
    let from_manifest = value.get("manifest_version").is_some();
    if from_manifest {
        value = value
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::Config(format!("{}: manifest without a config section", path.display())))?;
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let config: RunConfig = if overrides.is_empty() && !from_manifest {
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| schema_error(path, e, true))?
    } else {
        serde_path_to_error::deserialize(value.clone()).map_err(|e| schema_error(path, e, false))?
    };
    validate(&config).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value = serde_json::to_value(&config).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(LoadedConfig { config, value })
}

fn validate(c: &RunConfig) -> Result<(), String> {
    if c.multiplicity == 0 {
        return Err("multiplicity must be at least 1".into());
    }
    let init = &c.initial;
    if !(init.noise >= 0.0) || !(init.grid_spacing > 0.0) || !(init.min_distance >= 0.0) {
        return Err("initial: noise and min_distance must be non-negative, grid_spacing positive".into());
    }
    if !(c.regularization.eps_rho > 0.0) {
        return Err("regularization.eps_rho must be positive".into());
    }
    if !(c.solver.rcond_floor >= 0.0) {
        return Err("solver.rcond_floor must be non-negative".into());
    }
    if let Some(p) = c.output.checkpoint_period {
        if !(p > 0.0) {
            return Err("output.checkpoint_period must be positive".into());
        }
    }
    if c.spectrum.padding == 0 || c.spectrum.damping.is_some_and(|d| !(d > 0.0)) {
        return Err("spectrum: padding must be >= 1 and damping positive".into());
    }
    c.integrator.validate().map_err(|e| e.to_string())?;
    c.apoptosis.validate().map_err(|e| e.to_string())?;
    build_model(&c.model).map_err(|e| e.to_string())?;
    Ok(())
}

pub fn build_model(m: &ModelConfig) -> davydov::Result<ModelSpec> {
    Ok(match m {
        ModelConfig::SpinBoson(p) => ModelSpec::SpinBoson(SpinBoson::from_params(p)?),
        ModelConfig::Holstein(p) => ModelSpec::Holstein(Holstein::new(p)?),
        ModelConfig::Harmonic(b) => {
            let mut b = b.clone();
            let n = b.omega.len();
            if b.drive.is_empty() {
                b.drive = vec![0.0; n];
            }
            if b.initial.is_empty() {
                b.initial = vec![[0.0, 0.0]; n];
            }
            b.validate()?;
            ModelSpec::Harmonic(b)
        }
    })
}

impl RunConfig {
    pub fn initial_state(&self, model: &ModelSpec) -> davydov::Result<EnsembleState> {
        let settings = InitialSettings {
            multiplicity: self.multiplicity,
            noise: self.initial.noise,
            grid_spacing: self.initial.grid_spacing,
            seed: self.seed,
            min_distance: self.initial.min_distance,
        };
        build_initial_state(&model.initial_condition(), &settings)
    }

    pub fn propagation(&self, run_dir: &Path) -> PropagationConfig {
        let mut p = PropagationConfig::new(self.integrator.clone());
        p.apoptosis = self.apoptosis;
        p.linear = LinearSettings {
            regularization: self.regularization,
            strategy: self.solver.strategy,
            rcond_floor: self.solver.rcond_floor,
        };
        p.checkpoint = self.output.checkpoint_period.map(|period| CheckpointPolicy {
            period,
            path: run_dir.join("checkpoint.json"),
        });
        p.record_diagnostics = self.output.diagnostics;
        p.symmetrize = self.solver.symmetrize;
        p
    }

    pub fn run_dir(&self, source: &Path) -> PathBuf {
        self.output.directory.clone().unwrap_or_else(|| {
            let stem = source.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            PathBuf::from("runs").join(stem)
        })
    }
}
