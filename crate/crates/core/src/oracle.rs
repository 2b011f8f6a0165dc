//! Brute-force reference dynamics in a truncated Fock basis.
//!
//! Basis states are `|n> (x) |m_1 ... m_N>` with every occupation at most
//! `n_max`; the first mode is the most significant digit.

use ndarray::{Array1, Array2, ArrayView1};

use crate::c64;
use crate::ensemble::EnsembleState;
use crate::error::{Error, Result};
use crate::models::{Holstein, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FockTruncation {
    pub n_max: usize,
    pub modes: usize,
    pub system_dim: usize,
    /// Largest admissible Hilbert-space dimension.
    pub max_dimension: usize,
}

impl FockTruncation {
    pub fn new(n_max: usize, modes: usize, system_dim: usize) -> Self {
        FockTruncation {
            n_max,
            modes,
            system_dim,
            max_dimension: 4096,
        }
    }

    fn bath_dim_checked(&self) -> Option<usize> {
        (0..self.modes).try_fold(1usize, |acc, _| acc.checked_mul(self.n_max + 1))
    }

    pub fn bath_dim(&self) -> usize {
        self.bath_dim_checked().unwrap_or(usize::MAX)
    }

    pub fn dim(&self) -> usize {
        self.bath_dim_checked()
            .and_then(|b| b.checked_mul(self.system_dim))
            .unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.system_dim == 0 {
            return Err(Error::Config("truncation needs at least one mode and one system state".into()));
        }
        if self.dim() > self.max_dimension {
            return Err(Error::Config(format!(
                "Fock dimension {} exceeds the cap {}",
                self.dim(),
                self.max_dimension
            )));
        }
        Ok(())
    }

    fn occupations(&self, mut bath_index: usize) -> Vec<usize> {
        let base = self.n_max + 1;
        let mut occ = vec![0; self.modes];
        for j in (0..self.modes).rev() {
            occ[j] = bath_index % base;
            bath_index /= base;
        }
        occ
    }

    fn stride(&self, mode: usize) -> usize {
        (self.n_max + 1).pow((self.modes - 1 - mode) as u32)
    }
}

/// Fock amplitudes `alpha^m e^{-|alpha|^2/2} / sqrt(m!)` of one mode.
pub fn coherent_amplitudes(alpha: c64, n_max: usize) -> Vec<c64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut v = c64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for m in 0..=n_max {
        if m > 0 {
            v = v * alpha / (m as f64).sqrt();
        }
        out.push(v);
    }
    out
}

/// `|system> (x) |alpha>` in the truncated basis.
pub fn product_state(system: ArrayView1<c64>, alpha: ArrayView1<c64>, trunc: &FockTruncation) -> Result<Array1<c64>> {
    trunc.validate()?;
    if system.len() != trunc.system_dim || alpha.len() != trunc.modes {
        return Err(Error::Dimension {
            what: "product state",
            expected: trunc.system_dim + trunc.modes,
            actual: system.len() + alpha.len(),
        });
    }
    let mut bath = vec![c64::new(1.0, 0.0)];
    for a in alpha.iter() {
        let amp = coherent_amplitudes(*a, trunc.n_max);
        let mut next = Vec::with_capacity(bath.len() * amp.len());
        for b in &bath {
            for c in &amp {
                next.push(b * c);
            }
        }
        bath = next;
    }
    let bd = bath.len();
    let mut out = Array1::zeros(trunc.dim());
    for (n, s) in system.iter().enumerate() {
        for (i, b) in bath.iter().enumerate() {
            out[n * bd + i] = s * b;
        }
    }
    Ok(out)
}

/// Truncated expansion of an ensemble state.
#[derive(Clone, Debug, PartialEq)]
pub struct FockExpansion {
    pub vector: Array1<c64>,
    /// Largest single-CS probability lost to the truncation.
    pub deficit: f64,
}

pub fn expand_cs(state: &EnsembleState, trunc: &FockTruncation) -> Result<FockExpansion> {
    let mut vector = Array1::zeros(trunc.dim());
    let mut deficit: f64 = 0.0;
    for k in 0..state.multiplicity() {
        let alpha = state.displacements.row(k);
        let v = product_state(state.coefficients.column(k), alpha, trunc)?;
        vector += &v;
        let kept: f64 = alpha
            .iter()
            .map(|a| coherent_amplitudes(*a, trunc.n_max).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .product();
        deficit = deficit.max(1.0 - kept);
    }
    Ok(FockExpansion { vector, deficit })
}

/// Truncated Hamiltonian in compressed-row form.
#[derive(Clone, Debug)]
pub struct SparseHamiltonian {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<c64>,
}

impl SparseHamiltonian {
    fn from_rows(rows: Vec<Vec<(usize, c64)>>) -> Self {
        let mut row_start = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_start.push(cols.len());
        }
        SparseHamiltonian {
            dim: row_start.len() - 1,
            row_start,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, x: &[c64], y: &mut [c64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = c64::new(0.0, 0.0);
            for e in self.row_start[r]..self.row_start[r + 1] {
                acc += self.vals[e] * x[self.cols[e]];
            }
            *out = acc;
        }
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|r| self.vals[self.row_start[r]..self.row_start[r + 1]].iter().map(|v| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Array2<c64> {
        let mut h = Array2::zeros((self.dim, self.dim));
        for r in 0..self.dim {
            for e in self.row_start[r]..self.row_start[r + 1] {
                h[[r, self.cols[e]]] += self.vals[e];
            }
        }
        h
    }
}

/// Sparse Hamiltonian of a model in the truncated basis.
pub fn sparse_hamiltonian(model: &ModelSpec, trunc: &FockTruncation) -> Result<SparseHamiltonian> {
    trunc.validate()?;
    let ns = trunc.system_dim;
    let bd = trunc.bath_dim();
    let dim = trunc.dim();
    let nm = trunc.n_max;
    let mut rows: Vec<Vec<(usize, c64)>> = vec![Vec::new(); dim];

    // sum_j w_j a_j^+ a_j and linear terms sum_j (c_j a_j + conj(c_j) a_j^+)
    // with a system-state dependent c_j.
    let add_bath = |rows: &mut Vec<Vec<(usize, c64)>>, omega: &[f64], linear: &dyn Fn(usize, usize) -> c64| {
        for n in 0..ns {
            for b in 0..bd {
                let occ = trunc.occupations(b);
                let row = n * bd + b;
                let mut diag = 0.0;
                for j in 0..trunc.modes {
                    diag += omega[j] * occ[j] as f64;
                    let c = linear(n, j);
                    if occ[j] < nm && c != c64::new(0.0, 0.0) {
                        // <occ+1| a^+ |occ>
                        let to = row + trunc.stride(j);
                        let amp = ((occ[j] + 1) as f64).sqrt();
                        rows[to].push((row, c.conj() * amp));
                        rows[row].push((to, c * amp));
                    }
                }
                rows[row].push((row, c64::new(diag, 0.0)));
            }
        }
    };

    match model {
        ModelSpec::SpinBoson(sb) => {
            if ns != 2 || sb.omega.len() != trunc.modes {
                return Err(Error::Config("truncation does not match the spin-boson model".into()));
            }
            add_bath(&mut rows, &sb.omega, &|n, j| {
                let sz = if n == 0 { 1.0 } else { -1.0 };
                c64::new(-0.5 * sz * sb.lambda[j], 0.0)
            });
            for b in 0..bd {
                rows[b].push((bd + b, c64::new(0.5 * sb.delta, 0.0)));
                rows[bd + b].push((b, c64::new(0.5 * sb.delta, 0.0)));
            }
        }
        ModelSpec::Holstein(ho) => {
            let n = ho.sites();
            if ns != n || n != trunc.modes {
                return Err(Error::Config("truncation does not match the Holstein model".into()));
            }
            add_bath(&mut rows, &ho.omega, &|s, i| {
                let m = Holstein::label(n, s) as f64;
                ho.lambda[i] * ho.omega[i] * c64::from_polar(1.0, ho.q[i] * m)
            });
            for s in 0..n {
                for nb in [(s + 1) % n, (s + n - 1) % n] {
                    for b in 0..bd {
                        rows[s * bd + b].push((nb * bd + b, c64::new(-ho.hopping, 0.0)));
                    }
                }
            }
        }
        ModelSpec::Harmonic(hb) => {
            if ns != 1 || hb.omega.len() != trunc.modes {
                return Err(Error::Config("truncation does not match the harmonic bath".into()));
            }
            add_bath(&mut rows, &hb.omega, &|_, j| c64::new(hb.drive.get(j).copied().unwrap_or(0.0), 0.0));
            for (b, row) in rows.iter_mut().enumerate().take(bd) {
                row.push((b, c64::new(hb.offset, 0.0)));
            }
        }
    }
    Ok(SparseHamiltonian::from_rows(rows))
}

/// Dense Hamiltonian of a model in the truncated basis.
pub fn fock_hamiltonian(model: &ModelSpec, trunc: &FockTruncation) -> Result<Array2<c64>> {
    Ok(sparse_hamiltonian(model, trunc)?.to_dense())
}

/// `e^{-iHt}` of a truncated Hamiltonian by short Taylor steps, each
/// summed until the terms drop below machine precision.
pub struct ExactPropagator {
    pub trunc: FockTruncation,
    h: SparseHamiltonian,
    dt_max: f64,
}

impl ExactPropagator {
    pub fn new(model: &ModelSpec, trunc: &FockTruncation) -> Result<Self> {
        let h = sparse_hamiltonian(model, trunc)?;
        let dt_max = 1.0 / h.norm_bound().max(1e-300);
        Ok(ExactPropagator { trunc: *trunc, h, dt_max })
    }

    pub fn hamiltonian(&self) -> &SparseHamiltonian {
        &self.h
    }

    fn taylor_step(&self, psi: &mut [c64], dt: f64, term: &mut Vec<c64>, next: &mut Vec<c64>) {
        term.copy_from_slice(psi);
        for order in 1..60 {
            self.h.apply(term, next);
            let f = c64::new(0.0, -dt / order as f64);
            let mut size: f64 = 0.0;
            for (p, (t, x)) in psi.iter_mut().zip(term.iter_mut().zip(next.iter())) {
                *t = x * f;
                *p += *t;
                size = size.max(t.norm());
            }
            if size < 1e-18 {
                break;
            }
        }
    }

    /// Advances `psi` in place by `t`.
    pub fn evolve(&self, psi: &mut Array1<c64>, t: f64) -> Result<()> {
        if psi.len() != self.trunc.dim() {
            return Err(Error::Dimension {
                what: "oracle state",
                expected: self.trunc.dim(),
                actual: psi.len(),
            });
        }
        if t == 0.0 {
            return Ok(());
        }
        let steps = (t.abs() / self.dt_max).ceil().max(1.0) as usize;
        let dt = t / steps as f64;
        let data = psi.as_slice_mut().expect("contiguous state");
        let mut term = vec![c64::new(0.0, 0.0); data.len()];
        let mut next = term.clone();
        for _ in 0..steps {
            self.taylor_step(data, dt, &mut term, &mut next);
        }
        Ok(())
    }

    pub fn propagate(&self, psi: &Array1<c64>, t: f64) -> Result<Array1<c64>> {
        let mut out = psi.as_standard_layout().to_owned();
        self.evolve(&mut out, t)?;
        Ok(out)
    }
}

/// `psi(t) = e^{-iHt} psi`.
pub fn propagate_exact(psi: &Array1<c64>, model: &ModelSpec, trunc: &FockTruncation, t: f64) -> Result<Array1<c64>> {
    ExactPropagator::new(model, trunc)?.propagate(psi, t)
}

/// Probability of each system state.
pub fn system_populations(psi: &Array1<c64>, trunc: &FockTruncation) -> Vec<f64> {
    let bd = trunc.bath_dim();
    (0..trunc.system_dim)
        .map(|n| psi.iter().skip(n * bd).take(bd).map(|z| z.norm_sqr()).sum())
        .collect()
}

/// `<sigma_z>` of a spin-boson state vector.
pub fn population_z(psi: &Array1<c64>, trunc: &FockTruncation) -> f64 {
    let p = system_populations(psi, trunc);
    p[0] - p[1]
}

pub fn norm_squared(psi: &Array1<c64>) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_is_unit_vector() {
        let t = FockTruncation::new(5, 2, 1);
        let v = product_state(
            ndarray::array![c64::new(1.0, 0.0)].view(),
            ndarray::array![c64::new(0.0, 0.0), c64::new(0.0, 0.0)].view(),
            &t,
        )
        .unwrap();
        assert_eq!(v[0], c64::new(1.0, 0.0));
        assert!(v.iter().skip(1).all(|z| *z == c64::new(0.0, 0.0)));
    }

    #[test]
    fn dimension_cap() {
        let mut t = FockTruncation::new(30, 3, 2);
        assert!(t.validate().is_err());
        t.max_dimension = usize::MAX;
        assert!(t.validate().is_ok());
    }
}
