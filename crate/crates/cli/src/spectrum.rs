//! Absorption spectrum of a finished Holstein run.

use std::path::Path;

use davydov::c64;
use davydov::models::ModelSpec;
use davydov::observables::{absorption_spectrum, fit_poisson, poisson_reference, ComplexSeries, PoissonFit};
use serde::Serialize;

use crate::config::{self, build_model};
use crate::error::CliError;
use crate::run::{AUTOCORRELATION, MANIFEST};

pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const FIT_JSON: &str = "spectrum_fit.json";

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub huang_rhys: f64,
    pub omega0: f64,
    pub damping: f64,
    pub padding: usize,
    pub negative_fraction: f64,
    pub fit: PoissonFit,
}

pub fn read_autocorrelation(path: &Path) -> Result<ComplexSeries, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut series = ComplexSeries::default();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Io(format!("{}: malformed row {:?}", path.display(), rec)))
        };
        series.times.push(field(0)?);
        series.values.push(c64::new(field(1)?, field(2)?));
    }
    Ok(series)
}

/// Reads `autocorrelation.csv` and the manifest of `run_dir`, writes
/// `spectrum.csv` and the Poisson fit.
pub fn spectrum(
    run_dir: &Path,
    damping: Option<f64>,
    padding: Option<usize>,
    threshold: Option<f64>,
) -> Result<SpectrumReport, CliError> {
    let loaded = config::load(&run_dir.join(MANIFEST), &[])?;
    let cfg = &loaded.config;
    let (huang_rhys, omega0) = match build_model(&cfg.model)? {
        ModelSpec::Holstein(h) => {
            let omega0 = match &cfg.model {
                config::ModelConfig::Holstein(p) => p.omega0,
                _ => unreachable!(),
            };
            (h.huang_rhys(), omega0)
        }
        _ => return Err(CliError::Usage("spectra are defined for Holstein runs only".into())),
    };
    let series = read_autocorrelation(&run_dir.join(AUTOCORRELATION))?;
    let horizon = series.times.last().copied().unwrap_or(0.0) - series.times.first().copied().unwrap_or(0.0);
    let damping = damping.or(cfg.spectrum.damping).unwrap_or(horizon / 5.0);
    let padding = padding.unwrap_or(cfg.spectrum.padding);
    let threshold = threshold.unwrap_or(cfg.spectrum.threshold);
    let spec = absorption_spectrum(&series, damping, padding)?;
    let reference = poisson_reference(huang_rhys, omega0, 1.0 / damping, &spec.omega);

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(run_dir.join(SPECTRUM_CSV))?;
    w.write_record(["omega", "F", "poisson"])?;
    for ((om, f), p) in spec.omega.iter().zip(&spec.intensity).zip(&reference) {
        w.write_record([format!("{om}"), format!("{f}"), format!("{p}")])?;
    }
    w.flush()?;

    let report = SpectrumReport {
        huang_rhys,
        omega0,
        damping,
        padding,
        negative_fraction: spec.negative_fraction(),
        fit: fit_poisson(&spec, omega0, threshold)?,
    };
    std::fs::write(run_dir.join(FIT_JSON), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
