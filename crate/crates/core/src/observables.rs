//! Physical observables and post-processing of time series.

use std::f64::consts::PI;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::c64;
use crate::ensemble::{coefficient_gram, EnsembleState};
use crate::error::{Error, Result};
use crate::models::{ExcitonStart, Hamiltonian};

/// Real samples on an equidistant time grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Complex samples on an equidistant time grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexSeries {
    pub times: Vec<f64>,
    pub values: Vec<c64>,
}

fn check_grid(times: &[f64], len: usize) -> Result<f64> {
    if times.len() != len {
        return Err(Error::Dimension {
            what: "time series",
            expected: times.len(),
            actual: len,
        });
    }
    if times.len() < 2 {
        return Err(Error::Config("time series needs at least two samples".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Config("time grid must be strictly increasing".into()));
    }
    for (i, t) in times.iter().enumerate() {
        if (t - (times[0] + i as f64 * dt)).abs() > 1e-9 * dt.max(times[0].abs()) {
            return Err(Error::Config(format!("time grid is not equidistant at sample {i}")));
        }
    }
    Ok(dt)
}

impl TimeSeries {
    pub fn validate(&self) -> Result<f64> {
        check_grid(&self.times, self.values.len())
    }
}

impl ComplexSeries {
    pub fn validate(&self) -> Result<f64> {
        check_grid(&self.times, self.values.len())
    }
}

/// `Sum_nn' rho-like contraction with overlaps, restricted to one system index.
fn weighted_population(state: &EnsembleState, n: usize, s: &ndarray::Array2<c64>) -> f64 {
    let a = &state.coefficients;
    let m = state.multiplicity();
    let mut acc = 0.0;
    for l in 0..m {
        let al = a[[n, l]].conj();
        for k in 0..m {
            acc += (al * a[[n, k]] * s[[l, k]]).re;
        }
    }
    acc
}

/// `<sigma_z>` of a two-level system in the basis `{|+>, |->}`.
pub fn population_z(state: &EnsembleState) -> Result<f64> {
    if state.system_dim() != 2 {
        return Err(Error::Dimension {
            what: "spin population",
            expected: 2,
            actual: state.system_dim(),
        });
    }
    let s = state.overlap_matrix();
    Ok(weighted_population(state, 0, &s) - weighted_population(state, 1, &s))
}

/// Diagonal of the reduced system density matrix.
pub fn exciton_density(state: &EnsembleState) -> Vec<f64> {
    let s = state.overlap_matrix();
    (0..state.system_dim()).map(|n| weighted_population(state, n, &s)).collect()
}

/// `<Psi|H|Psi>`.
pub fn energy<H: Hamiltonian + ?Sized>(state: &EnsembleState, model: &H) -> Result<f64> {
    let ns = state.system_dim();
    if model.system_dim() != ns || model.mode_count() != state.mode_count() {
        return Err(Error::Config("model and state dimensions disagree".into()));
    }
    let a = &state.coefficients;
    let f = &state.displacements;
    let s = state.overlap_matrix();
    let m = state.multiplicity();
    let mut h = ndarray::Array2::zeros((ns, ns));
    let mut acc = 0.0;
    for l in 0..m {
        for k in 0..m {
            model.matrix_into(f.row(l), f.row(k), &mut h);
            let mut v = c64::new(0.0, 0.0);
            for n in 0..ns {
                let an = a[[n, l]].conj();
                for np in 0..ns {
                    v += an * h[[n, np]] * a[[np, k]];
                }
            }
            acc += (v * s[[l, k]]).re;
        }
    }
    Ok(acc)
}

/// Norm contribution `Re sum rho_lk S_lk`; identical to the state's norm.
pub fn norm_squared(state: &EnsembleState) -> f64 {
    let s = state.overlap_matrix();
    coefficient_gram(&state.coefficients)
        .iter()
        .zip(s.iter())
        .map(|(r, s)| (r * s).re)
        .sum()
}

/// Dipole autocorrelation `F(t) = N <B|Psi_B(t)>` with unit dipole.
///
/// For a bright-state run the overlap is taken directly. For a run started
/// on the central site, translation invariance gives
/// `<B|e^{-iHt}|B> = sum_m <m, 0|e^{-iHt}|0, 0>`.
pub fn autocorrelation(state: &EnsembleState, start: ExcitonStart) -> c64 {
    let n = state.system_dim() as f64;
    let mut acc = c64::new(0.0, 0.0);
    for l in 0..state.multiplicity() {
        let vac: f64 = state.displacements.row(l).iter().map(|z| z.norm_sqr()).sum();
        let sum_a: c64 = state.coefficients.column(l).iter().sum();
        acc += sum_a * (-0.5 * vac).exp();
    }
    match start {
        ExcitonStart::Site0 => acc * n,
        ExcitonStart::Bright => acc * n.sqrt(),
    }
}

/// Spectrum on a frequency grid, ascending in `omega`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl Spectrum {
    pub fn step(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }

    pub fn integral(&self) -> f64 {
        self.intensity.iter().sum::<f64>() * self.step()
    }

    /// Integrated negative weight relative to the absolute weight.
    pub fn negative_fraction(&self) -> f64 {
        let neg: f64 = self.intensity.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
        let abs: f64 = self.intensity.iter().map(|v| v.abs()).sum();
        if abs > 0.0 {
            neg / abs
        } else {
            0.0
        }
    }
}

/// `(1/pi) Re int_0^T F(t) e^{-t/damping} e^{i w t} dt`, trapezoid rule,
/// zero-padded by `padding`, normalized to unit area. With this sign a
/// component `e^{-i w0 t}` appears at `w = w0`.
pub fn absorption_spectrum(series: &ComplexSeries, damping: f64, padding: usize) -> Result<Spectrum> {
    let dt = series.validate()?;
    if !(damping > 0.0) || padding == 0 {
        return Err(Error::Config("damping must be positive and padding at least 1".into()));
    }
    let n = series.values.len();
    let len = n * padding;
    let t0 = series.times[0];
    let mut buf = vec![c64::new(0.0, 0.0); len];
    for i in 0..n {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let t = series.times[i] - t0;
        buf[i] = series.values[i] * (w * dt * (-t / damping).exp());
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(len).process(&mut buf);
    let dw = 2.0 * PI / (len as f64 * dt);
    let half = len / 2;
    let mut omega = Vec::with_capacity(len);
    let mut intensity = Vec::with_capacity(len);
    for idx in 0..len {
        let m = (idx + half) % len;
        let k = if m >= len - half { m as i64 - len as i64 } else { m as i64 };
        let wk = k as f64 * dw;
        let phase = c64::from_polar(1.0, wk * t0);
        omega.push(wk);
        intensity.push((buf[m] * phase).re / PI);
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| omega[a].partial_cmp(&omega[b]).unwrap());
    let omega: Vec<f64> = order.iter().map(|&i| omega[i]).collect();
    let mut intensity: Vec<f64> = order.iter().map(|&i| intensity[i]).collect();
    let area: f64 = intensity.iter().sum::<f64>() * dw;
    if !(area.abs() > 0.0) {
        return Err(Error::Config("spectrum has zero area".into()));
    }
    intensity.iter_mut().for_each(|v| *v /= area);
    Ok(Spectrum { omega, intensity })
}

/// `e^{-S} S^n / n!` for `n = 0..count`.
pub fn poisson_weights(s: f64, count: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(count);
    let mut p = (-s).exp();
    for n in 0..count {
        if n > 0 {
            p *= s / n as f64;
        }
        w.push(p);
    }
    w
}

/// Poisson progression of Lorentzian lines at `-S w0 + n w0` with half width
/// `gamma`.
pub fn poisson_reference(s: f64, omega0: f64, gamma: f64, omega: &[f64]) -> Vec<f64> {
    let count = (s + 12.0 * s.sqrt() + 20.0).ceil() as usize;
    let weights = poisson_weights(s, count);
    omega
        .iter()
        .map(|&w| {
            weights
                .iter()
                .enumerate()
                .map(|(n, p)| {
                    let x = w - omega0 * (n as f64 - s);
                    p * gamma / PI / (x * x + gamma * gamma)
                })
                .sum()
        })
        .collect()
}

/// Band decomposition of a vibronic progression and its Poisson fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub lambda: f64,
    /// Centroids of the bands, lowest first.
    pub centers: Vec<f64>,
    /// Band areas normalized to unit sum.
    pub areas: Vec<f64>,
    /// Maximum intensity inside each band.
    pub heights: Vec<f64>,
    pub residual: f64,
}

/// Splits the spectrum into bands of width `omega0` starting at the lowest
/// peak above `threshold` times the global maximum and fits Poisson weights
/// to the band areas.
pub fn fit_poisson(spectrum: &Spectrum, omega0: f64, threshold: f64) -> Result<PoissonFit> {
    let w = &spectrum.omega;
    let v = &spectrum.intensity;
    let n = w.len();
    if n < 3 || !(omega0 > 0.0) {
        return Err(Error::Config("fit needs a spectrum and positive w0".into()));
    }
    let vmax = v.iter().cloned().fold(f64::MIN, f64::max);
    let first = (1..n - 1)
        .find(|&i| v[i] >= v[i - 1] && v[i] > v[i + 1] && v[i] >= threshold * vmax)
        .ok_or_else(|| Error::Config("no peak above threshold".into()))?;
    let origin = w[first];
    let mut centers = Vec::new();
    let mut areas = Vec::new();
    let mut heights = Vec::new();
    let dw = spectrum.step();
    for band in 0.. {
        let lo = origin + (band as f64 - 0.5) * omega0;
        let hi = lo + omega0;
        if hi > w[n - 1] {
            break;
        }
        let mut area = 0.0;
        let mut moment = 0.0;
        let mut height = f64::MIN;
        for i in 0..n {
            if w[i] >= lo && w[i] < hi {
                let x = v[i].max(0.0);
                area += x * dw;
                moment += x * w[i] * dw;
                height = height.max(v[i]);
            }
        }
        if area <= 1e-6 && band > 0 {
            break;
        }
        centers.push(if area > 0.0 { moment / area } else { 0.5 * (lo + hi) });
        areas.push(area);
        heights.push(height);
    }
    let total: f64 = areas.iter().sum();
    areas.iter_mut().for_each(|a| *a /= total);
    let count = areas.len();
    let cost = |lambda: f64| -> f64 {
        poisson_weights(lambda, count)
            .iter()
            .zip(&areas)
            .map(|(p, a)| (p - a) * (p - a))
            .sum()
    };
    let upper = count as f64 + 5.0;
    let mut best = 0.0;
    let mut best_cost = f64::INFINITY;
    let grid = 400;
    for i in 0..=grid {
        let x = upper * i as f64 / grid as f64;
        let c = cost(x);
        if c < best_cost {
            best = x;
            best_cost = c;
        }
    }
    let step = upper / grid as f64;
    let (mut a, mut b) = ((best - step).max(0.0), best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if cost(x1) < cost(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let lambda = 0.5 * (a + b);
    Ok(PoissonFit {
        lambda,
        residual: cost(lambda),
        centers,
        areas,
        heights,
    })
}

/// Mean absolute deviation on identical grids.
pub fn error_measure(reference: &TimeSeries, other: &TimeSeries) -> Result<f64> {
    if reference.times.len() != other.times.len() {
        return Err(Error::Dimension {
            what: "error measure grid",
            expected: reference.times.len(),
            actual: other.times.len(),
        });
    }
    if reference.values.len() != reference.times.len() || other.values.len() != other.times.len() {
        return Err(Error::Config("series values and times differ in length".into()));
    }
    let scale = reference.times.iter().fold(1.0f64, |a, t| a.max(t.abs()));
    if reference
        .times
        .iter()
        .zip(&other.times)
        .any(|(a, b)| (a - b).abs() > 1e-9 * scale)
    {
        return Err(Error::Config("error measure needs identical time grids".into()));
    }
    let n = reference.values.len() as f64;
    Ok(reference
        .values
        .iter()
        .zip(&other.values)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}
