//! Normally ordered Hamiltonians evaluated between coherent states.
//!
//! A model supplies `H^{nn'}(a*, b)`, the system-space matrix of the normally
//! ordered Hamiltonian with bosonic operators replaced by the bra and ket
//! displacements, and its derivative with respect to the bra displacement.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::c64;
use crate::ensemble::InitialCondition;
use crate::error::{Error, Result};

pub trait Hamiltonian: Send + Sync {
    fn system_dim(&self) -> usize;

    fn mode_count(&self) -> usize;

    fn frequencies(&self) -> &[f64];

    /// Writes `H^{nn'}(bra*, ket)` into the `N_S x N_S` buffer.
    fn matrix_into(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, out: &mut Array2<c64>);

    /// Writes `dH^{nn'}/d bra*_mode` into the `N_S x N_S` buffer.
    fn derivative_into(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, mode: usize, out: &mut Array2<c64>);

    /// `out[i] = sum_{n n'} conj(c_bra[n]) dH^{nn'}/d bra*_i c_ket[n']` for every mode.
    fn contract_derivative(
        &self,
        bra: ArrayView1<c64>,
        ket: ArrayView1<c64>,
        c_bra: ArrayView1<c64>,
        c_ket: ArrayView1<c64>,
        out: &mut [c64],
    ) {
        let ns = self.system_dim();
        let mut buf = Array2::zeros((ns, ns));
        for (i, o) in out.iter_mut().enumerate() {
            self.derivative_into(bra, ket, i, &mut buf);
            let mut acc = c64::new(0.0, 0.0);
            for n in 0..ns {
                for np in 0..ns {
                    acc += c_bra[n].conj() * buf[[n, np]] * c_ket[np];
                }
            }
            *o = acc;
        }
    }

    /// Physical initial condition and lattice hints.
    fn initial_condition(&self) -> InitialCondition;

    fn matrix(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>) -> Array2<c64> {
        let ns = self.system_dim();
        let mut out = Array2::zeros((ns, ns));
        self.matrix_into(bra, ket, &mut out);
        out
    }

    fn derivative(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, mode: usize) -> Array2<c64> {
        let ns = self.system_dim();
        let mut out = Array2::zeros((ns, ns));
        self.derivative_into(bra, ket, mode, &mut out);
        out
    }
}

fn check_frequencies(omega: &[f64]) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::Config("at least one mode is required".into()));
    }
    if let Some(w) = omega.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Config(format!("mode frequency {w} is not positive and finite")));
    }
    Ok(())
}

/// How discrete couplings represent the spectral density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityConvention {
    /// `J(w) = pi sum_j lambda_j^2 delta(w - w_j)`.
    #[default]
    Pi,
    /// `J(w) = (pi/2) sum_j lambda_j^2 delta(w - w_j)`.
    HalfPi,
}

/// Sub-Ohmic bath discretized with the density of frequencies
/// `rho_f(w) = (N/w_c) exp(-w/w_c)` at half-integer quantiles.
pub fn discretize_subohmic(
    alpha: f64,
    s: f64,
    omega_c: f64,
    modes: usize,
    convention: DensityConvention,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if modes == 0 || !(omega_c > 0.0) || !(s > 0.0) || !(alpha >= 0.0) {
        return Err(Error::Config("sub-Ohmic discretization needs N >= 1, w_c > 0, s > 0, alpha >= 0".into()));
    }
    let n = modes as f64;
    let omega: Vec<f64> = (1..=modes)
        .map(|j| -omega_c * (1.0 - (j as f64 - 0.5) / n).ln())
        .collect();
    let factor = match convention {
        DensityConvention::Pi => 1.0,
        DensityConvention::HalfPi => 2.0,
    };
    let lambda = omega
        .iter()
        .map(|w| (factor * 2.0 * alpha * omega_c.powf(2.0 - s) * w.powf(s) / n).sqrt())
        .collect();
    Ok((omega, lambda))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinBosonParams {
    pub delta: f64,
    pub alpha: f64,
    pub s: f64,
    #[serde(default = "one")]
    pub omega_c: f64,
    pub modes: usize,
    #[serde(default)]
    pub convention: DensityConvention,
}

fn one() -> f64 {
    1.0
}

/// `H = (Delta/2) sx - (1/2) sz sum_j lambda_j (a_j + a_j^+) + sum_j w_j a_j^+ a_j`
/// in the sz eigenbasis `{|+>, |->}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinBoson {
    pub delta: f64,
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl SpinBoson {
    pub fn new(delta: f64, omega: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_frequencies(&omega)?;
        if omega.len() != lambda.len() {
            return Err(Error::Dimension {
                what: "spin-boson couplings",
                expected: omega.len(),
                actual: lambda.len(),
            });
        }
        if !delta.is_finite() || lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("spin-boson parameters must be finite".into()));
        }
        Ok(SpinBoson { delta, omega, lambda })
    }

    pub fn from_params(p: &SpinBosonParams) -> Result<Self> {
        let (omega, lambda) = discretize_subohmic(p.alpha, p.s, p.omega_c, p.modes, p.convention)?;
        SpinBoson::new(p.delta, omega, lambda)
    }

    /// Equilibrium displacement `d_j = lambda_j / (2 w_j)` of the `|+>` branch.
    pub fn equilibrium_displacement(&self) -> Vec<f64> {
        self.omega.iter().zip(&self.lambda).map(|(w, l)| l / (2.0 * w)).collect()
    }
}

impl Hamiltonian for SpinBoson {
    fn system_dim(&self) -> usize {
        2
    }

    fn mode_count(&self) -> usize {
        self.omega.len()
    }

    fn frequencies(&self) -> &[f64] {
        &self.omega
    }

    fn matrix_into(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, out: &mut Array2<c64>) {
        let mut lin = c64::new(0.0, 0.0);
        let mut bath = c64::new(0.0, 0.0);
        for j in 0..self.omega.len() {
            let a = bra[j].conj();
            lin += self.lambda[j] * (a + ket[j]);
            bath += self.omega[j] * a * ket[j];
        }
        let t = c64::new(0.5 * self.delta, 0.0);
        out[[0, 0]] = bath - 0.5 * lin;
        out[[1, 1]] = bath + 0.5 * lin;
        out[[0, 1]] = t;
        out[[1, 0]] = t;
    }

    fn derivative_into(&self, _bra: ArrayView1<c64>, ket: ArrayView1<c64>, mode: usize, out: &mut Array2<c64>) {
        let base = self.omega[mode] * ket[mode];
        let half = 0.5 * self.lambda[mode];
        out[[0, 0]] = base - half;
        out[[1, 1]] = base + half;
        out[[0, 1]] = c64::new(0.0, 0.0);
        out[[1, 0]] = c64::new(0.0, 0.0);
    }

    fn contract_derivative(
        &self,
        _bra: ArrayView1<c64>,
        ket: ArrayView1<c64>,
        c_bra: ArrayView1<c64>,
        c_ket: ArrayView1<c64>,
        out: &mut [c64],
    ) {
        let up = c_bra[0].conj() * c_ket[0];
        let down = c_bra[1].conj() * c_ket[1];
        let total = up + down;
        let diff = up - down;
        for (i, o) in out.iter_mut().enumerate() {
            *o = total * self.omega[i] * ket[i] - diff * (0.5 * self.lambda[i]);
        }
    }

    fn initial_condition(&self) -> InitialCondition {
        let n = self.omega.len();
        InitialCondition {
            system: Array1::from(vec![c64::new(1.0, 0.0), c64::new(0.0, 0.0)]),
            displacement: self.equilibrium_displacement().into_iter().map(|d| c64::new(d, 0.0)).collect(),
            embedding: (0..n).collect(),
            mode_mirror: None,
            system_mirror: None,
        }
    }
}

/// Exciton-phonon couplings of the Holstein crystal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HolsteinCoupling {
    /// `lambda_n = g / sqrt(N)`.
    Constant { g: f64 },
    /// `lambda_n = g` for every mode, total Huang-Rhys factor `N g^2`.
    PerMode { g: f64 },
    /// Couplings sampled from `J(w) = (2S/(pi W^2)) w^2 sqrt(W^2 - (w - w0)^2)`.
    Spectral { huang_rhys: f64 },
}

/// Which single-exciton state starts the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitonStart {
    /// Exciton localized on the central site `m = 0`.
    #[default]
    Site0,
    /// `N^{-1/2} sum_m |m>`.
    Bright,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolsteinParams {
    pub sites: usize,
    pub hopping: f64,
    #[serde(default = "one")]
    pub omega0: f64,
    pub bandwidth: f64,
    pub coupling: HolsteinCoupling,
    #[serde(default)]
    pub start: ExcitonStart,
}

/// Spectral density of the Holstein phonon band.
pub fn holstein_spectral_density(huang_rhys: f64, omega0: f64, bandwidth: f64, omega: f64) -> f64 {
    let arg = bandwidth * bandwidth - (omega - omega0) * (omega - omega0);
    if arg <= 0.0 {
        0.0
    } else {
        2.0 * huang_rhys / (PI * bandwidth * bandwidth) * omega * omega * arg.sqrt()
    }
}

/// Couplings from the band spectral density. The distinct frequencies of the
/// pair-degenerate ladder are integrated with the trapezoid rule and each
/// weight is split equally over the degenerate modes, which gives every mode
/// the measure `2W/N`.
pub fn discretize_holstein_sd(huang_rhys: f64, omega0: f64, bandwidth: f64, omega: &[f64]) -> Result<Vec<f64>> {
    let tol = 1e-12 * (omega0.abs() + bandwidth.abs());
    if let Some(w) = omega.iter().find(|w| **w < omega0 - bandwidth - tol || **w > omega0 + bandwidth + tol) {
        return Err(Error::Config(format!("frequency {w} lies outside the phonon band")));
    }
    let weight = 2.0 * bandwidth / omega.len() as f64;
    Ok(omega
        .iter()
        .map(|&w| (holstein_spectral_density(huang_rhys, omega0, bandwidth, w) * weight).sqrt() / w)
        .collect())
}

/// One-dimensional periodic Holstein crystal in the single-exciton sector.
///
/// Sites and modes are labelled `m, n = -N/2+1 .. N/2` and stored at index
/// `m + N/2 - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Holstein {
    pub hopping: f64,
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    pub q: Vec<f64>,
    pub start: ExcitonStart,
    /// `lambda_n w_n e^{i q_n m}` indexed `[site, mode]`.
    phase: Array2<c64>,
}

impl Holstein {
    pub fn new(p: &HolsteinParams) -> Result<Self> {
        let n = p.sites;
        if n < 2 || n % 2 != 0 {
            return Err(Error::Config(format!("Holstein chain needs an even number of sites, got {n}")));
        }
        if !(p.omega0 > 0.0) || !(p.bandwidth >= 0.0) || p.bandwidth >= p.omega0 || !p.hopping.is_finite() {
            return Err(Error::Config("Holstein parameters need 0 <= W < w0 and finite J".into()));
        }
        let q: Vec<f64> = (0..n).map(|i| 2.0 * PI * Self::label(n, i) as f64 / n as f64).collect();
        let omega: Vec<f64> = q
            .iter()
            .map(|qn| p.omega0 + p.bandwidth * (2.0 * qn.abs() / PI - 1.0))
            .collect();
        let lambda = match p.coupling {
            HolsteinCoupling::Constant { g } => vec![g / (n as f64).sqrt(); n],
            HolsteinCoupling::PerMode { g } => vec![g; n],
            HolsteinCoupling::Spectral { huang_rhys } => {
                discretize_holstein_sd(huang_rhys, p.omega0, p.bandwidth, &omega)?
            }
        };
        Self::from_tables(p.hopping, omega, lambda, q, p.start)
    }

    pub fn from_tables(hopping: f64, omega: Vec<f64>, lambda: Vec<f64>, q: Vec<f64>, start: ExcitonStart) -> Result<Self> {
        check_frequencies(&omega)?;
        let n = omega.len();
        if lambda.len() != n || q.len() != n {
            return Err(Error::Dimension {
                what: "Holstein tables",
                expected: n,
                actual: lambda.len().min(q.len()),
            });
        }
        let mut phase = Array2::zeros((n, n));
        for s in 0..n {
            let m = Self::label(n, s) as f64;
            for i in 0..n {
                phase[[s, i]] = lambda[i] * omega[i] * c64::from_polar(1.0, q[i] * m);
            }
        }
        Ok(Holstein {
            hopping,
            omega,
            lambda,
            q,
            start,
            phase,
        })
    }

    pub fn sites(&self) -> usize {
        self.omega.len()
    }

    /// Total Huang-Rhys factor `sum_q lambda_q^2`.
    pub fn huang_rhys(&self) -> f64 {
        self.lambda.iter().map(|l| l * l).sum()
    }

    /// Label `m` stored at index `i`.
    pub fn label(n: usize, i: usize) -> i64 {
        i as i64 - n as i64 / 2 + 1
    }

    /// Index of label `m`, taken modulo the chain length.
    pub fn index(n: usize, m: i64) -> usize {
        (m + n as i64 / 2 - 1).rem_euclid(n as i64) as usize
    }

    /// Reflection `m -> -m` expressed on indices.
    pub fn mirror(n: usize) -> Vec<usize> {
        (0..n).map(|i| Self::index(n, -Self::label(n, i))).collect()
    }
}

impl Hamiltonian for Holstein {
    fn system_dim(&self) -> usize {
        self.omega.len()
    }

    fn mode_count(&self) -> usize {
        self.omega.len()
    }

    fn frequencies(&self) -> &[f64] {
        &self.omega
    }

    fn matrix_into(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, out: &mut Array2<c64>) {
        let n = self.omega.len();
        out.fill(c64::new(0.0, 0.0));
        let mut bath = c64::new(0.0, 0.0);
        for i in 0..n {
            bath += self.omega[i] * bra[i].conj() * ket[i];
        }
        for s in 0..n {
            let mut acc = bath;
            for i in 0..n {
                let p = self.phase[[s, i]];
                acc += p * ket[i] + p.conj() * bra[i].conj();
            }
            out[[s, s]] = acc;
            let right = (s + 1) % n;
            let left = (s + n - 1) % n;
            out[[s, right]] -= self.hopping;
            out[[s, left]] -= self.hopping;
        }
    }

    fn derivative_into(&self, _bra: ArrayView1<c64>, ket: ArrayView1<c64>, mode: usize, out: &mut Array2<c64>) {
        let n = self.omega.len();
        out.fill(c64::new(0.0, 0.0));
        for s in 0..n {
            out[[s, s]] = self.omega[mode] * ket[mode] + self.phase[[s, mode]].conj();
        }
    }

    fn contract_derivative(
        &self,
        _bra: ArrayView1<c64>,
        ket: ArrayView1<c64>,
        c_bra: ArrayView1<c64>,
        c_ket: ArrayView1<c64>,
        out: &mut [c64],
    ) {
        let n = self.omega.len();
        let weights: Vec<c64> = (0..n).map(|s| c_bra[s].conj() * c_ket[s]).collect();
        let total: c64 = weights.iter().sum();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = total * self.omega[i] * ket[i];
            for s in 0..n {
                acc += weights[s] * self.phase[[s, i]].conj();
            }
            *o = acc;
        }
    }

    fn initial_condition(&self) -> InitialCondition {
        let n = self.omega.len();
        let system = match self.start {
            ExcitonStart::Site0 => {
                let mut v = Array1::zeros(n);
                v[Self::index(n, 0)] = c64::new(1.0, 0.0);
                v
            }
            ExcitonStart::Bright => Array1::from_elem(n, c64::new(1.0 / (n as f64).sqrt(), 0.0)),
        };
        // Strongest couplings first; mirror partners stay adjacent.
        let mut embedding: Vec<usize> = (0..n).collect();
        embedding.sort_by(|&a, &b| {
            let la = Self::label(n, a);
            let lb = Self::label(n, b);
            self.lambda[b]
                .partial_cmp(&self.lambda[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(la.abs().cmp(&lb.abs()))
                .then(lb.cmp(&la))
        });
        let mirror = Self::mirror(n);
        InitialCondition {
            system,
            displacement: Array1::zeros(n),
            embedding,
            mode_mirror: Some(mirror.clone()),
            system_mirror: Some(mirror),
        }
    }
}

/// `H = e0 + sum_j w_j a_j^+ a_j + sum_j k_j (a_j + a_j^+)` with a one-level system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicBath {
    #[serde(default)]
    pub offset: f64,
    pub omega: Vec<f64>,
    #[serde(default)]
    pub drive: Vec<f64>,
    /// Initial displacement of the physical coherent state.
    #[serde(default)]
    pub initial: Vec<[f64; 2]>,
}

impl HarmonicBath {
    pub fn new(omega: Vec<f64>) -> Self {
        let n = omega.len();
        HarmonicBath {
            offset: 0.0,
            omega,
            drive: vec![0.0; n],
            initial: vec![[0.0, 0.0]; n],
        }
    }

    /// All frequencies and drives zero.
    pub fn zero(modes: usize) -> Self {
        HarmonicBath::new(vec![0.0; modes])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.omega.len();
        if n == 0 || self.drive.len() != n || self.initial.len() != n {
            return Err(Error::Config("harmonic bath tables must be non-empty and equally long".into()));
        }
        if self.omega.iter().chain(&self.drive).any(|v| !v.is_finite()) || self.omega.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("harmonic bath needs finite, non-negative frequencies".into()));
        }
        Ok(())
    }

    fn drive_at(&self, j: usize) -> f64 {
        self.drive.get(j).copied().unwrap_or(0.0)
    }
}

impl Hamiltonian for HarmonicBath {
    fn system_dim(&self) -> usize {
        1
    }

    fn mode_count(&self) -> usize {
        self.omega.len()
    }

    fn frequencies(&self) -> &[f64] {
        &self.omega
    }

    fn matrix_into(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, out: &mut Array2<c64>) {
        let mut acc = c64::new(self.offset, 0.0);
        for j in 0..self.omega.len() {
            let a = bra[j].conj();
            acc += self.omega[j] * a * ket[j] + self.drive_at(j) * (a + ket[j]);
        }
        out[[0, 0]] = acc;
    }

    fn derivative_into(&self, _bra: ArrayView1<c64>, ket: ArrayView1<c64>, mode: usize, out: &mut Array2<c64>) {
        out[[0, 0]] = self.omega[mode] * ket[mode] + self.drive_at(mode);
    }

    fn initial_condition(&self) -> InitialCondition {
        let n = self.omega.len();
        InitialCondition {
            system: Array1::from(vec![c64::new(1.0, 0.0)]),
            displacement: (0..n)
                .map(|j| self.initial.get(j).map_or(c64::new(0.0, 0.0), |p| c64::new(p[0], p[1])))
                .collect(),
            embedding: (0..n).collect(),
            mode_mirror: None,
            system_mirror: None,
        }
    }
}

/// Any of the supported models.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    SpinBoson(SpinBoson),
    Holstein(Holstein),
    Harmonic(HarmonicBath),
}

impl ModelSpec {
    fn inner(&self) -> &dyn Hamiltonian {
        match self {
            ModelSpec::SpinBoson(m) => m,
            ModelSpec::Holstein(m) => m,
            ModelSpec::Harmonic(m) => m,
        }
    }
}

impl Hamiltonian for ModelSpec {
    fn system_dim(&self) -> usize {
        self.inner().system_dim()
    }

    fn mode_count(&self) -> usize {
        self.inner().mode_count()
    }

    fn frequencies(&self) -> &[f64] {
        self.inner().frequencies()
    }

    fn matrix_into(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, out: &mut Array2<c64>) {
        self.inner().matrix_into(bra, ket, out)
    }

    fn derivative_into(&self, bra: ArrayView1<c64>, ket: ArrayView1<c64>, mode: usize, out: &mut Array2<c64>) {
        self.inner().derivative_into(bra, ket, mode, out)
    }

    fn contract_derivative(
        &self,
        bra: ArrayView1<c64>,
        ket: ArrayView1<c64>,
        c_bra: ArrayView1<c64>,
        c_ket: ArrayView1<c64>,
        out: &mut [c64],
    ) {
        self.inner().contract_derivative(bra, ket, c_bra, c_ket, out)
    }

    fn initial_condition(&self) -> InitialCondition {
        self.inner().initial_condition()
    }
}
