//! Explicit assembly of the saddle-point blocks; the reference route.

use ndarray::{Array1, Array2};

use super::lu::LuFactors;
use super::{kernel, relative, singular, unfold_rows, LinearSolution, Regularization, Strategy};
use crate::c64;
use crate::ensemble::{ConnectivityPartition, EnsembleState};
use crate::error::{Error, Result};
use crate::models::Hamiltonian;

/// Blocks of `i [[S (x) 1, B], [B^+, D]] [x; y] = [r; s]`.
///
/// Coefficient indices `(l, n)` map to `l N_S + n`; displacement indices
/// `(j, k)` are mode-major and map to `j g + k`, where `g` is the number of
/// displacement columns (`M` before folding, the group count after).
#[derive(Clone, Debug, PartialEq)]
pub struct SystemBlocks {
    pub system_dim: usize,
    pub modes: usize,
    pub multiplicity: usize,
    pub overlap: Array2<c64>,
    pub coupling: Array2<c64>,
    pub displacement: Array2<c64>,
    pub rho: Array2<c64>,
    pub rho_regularized: Array2<c64>,
    pub r: Array1<c64>,
    pub s: Array1<c64>,
    /// Group of every coherent state.
    pub labels: Vec<usize>,
    pub groups: usize,
}

impl SystemBlocks {
    pub fn size(&self) -> usize {
        self.system_dim * self.multiplicity + self.modes * self.groups
    }
}

/// Assembles all blocks at full size.
pub fn assemble<H: Hamiltonian + ?Sized>(state: &EnsembleState, model: &H, reg: &Regularization) -> Result<SystemBlocks> {
    let k = kernel(state, model, reg)?;
    let ns = state.system_dim();
    let m = state.multiplicity();
    let n = state.mode_count();
    let a = &state.coefficients;
    let f = &state.displacements;

    let mut b = Array2::zeros((ns * m, n * m));
    for l in 0..m {
        for nn in 0..ns {
            for j in 0..n {
                let al = f[[l, j]].conj();
                for q in 0..m {
                    b[[l * ns + nn, j * m + q]] = al * a[[nn, q]] * k.s[[l, q]];
                }
            }
        }
    }
    let mut d = Array2::zeros((n * m, n * m));
    for i in 0..n {
        for l in 0..m {
            for j in 0..n {
                let al = f[[l, j]].conj();
                for q in 0..m {
                    let mut v = k.g_cross[[l, q]] * al * f[[q, i]];
                    if i == j {
                        v += k.g_id[[l, q]];
                    }
                    d[[i * m + l, j * m + q]] = v;
                }
            }
        }
    }
    let mut r = Array1::zeros(ns * m);
    for l in 0..m {
        for nn in 0..ns {
            r[l * ns + nn] = k.r[[nn, l]];
        }
    }
    let mut s = Array1::zeros(n * m);
    for i in 0..n {
        for l in 0..m {
            s[i * m + l] = k.s_vec[[l, i]];
        }
    }
    Ok(SystemBlocks {
        system_dim: ns,
        modes: n,
        multiplicity: m,
        overlap: k.s,
        coupling: b,
        displacement: d,
        rho: k.rho,
        rho_regularized: k.rho_reg,
        r,
        s,
        labels: (0..m).collect(),
        groups: m,
    })
}

/// Sums the displacement rows and columns of each group into one.
pub fn fold_apoptosis(blocks: &SystemBlocks, partition: &ConnectivityPartition) -> Result<SystemBlocks> {
    let m = blocks.multiplicity;
    let n = blocks.modes;
    if blocks.groups != m {
        return Err(Error::Contract("blocks are already folded".into()));
    }
    if partition.size() != m {
        return Err(Error::Dimension {
            what: "partition size",
            expected: m,
            actual: partition.size(),
        });
    }
    partition.validate(n)?;
    let labels = partition.labels();
    for (gi, g) in partition.groups().iter().enumerate() {
        if labels[g.representative] != gi {
            return Err(Error::Partition(format!(
                "representative {} is not in its own group",
                g.representative
            )));
        }
    }
    let g = partition.group_count();
    if g == m && labels.iter().enumerate().all(|(k, &l)| k == l) {
        return Ok(blocks.clone());
    }
    let rows_x = blocks.coupling.nrows();
    let mut b = Array2::zeros((rows_x, n * g));
    for row in 0..rows_x {
        for j in 0..n {
            for q in 0..m {
                b[[row, j * g + labels[q]]] += blocks.coupling[[row, j * m + q]];
            }
        }
    }
    let mut d = Array2::zeros((n * g, n * g));
    for i in 0..n {
        for l in 0..m {
            let row = i * g + labels[l];
            for j in 0..n {
                for q in 0..m {
                    d[[row, j * g + labels[q]]] += blocks.displacement[[i * m + l, j * m + q]];
                }
            }
        }
    }
    let mut s = Array1::zeros(n * g);
    for i in 0..n {
        for l in 0..m {
            s[i * g + labels[l]] += blocks.s[i * m + l];
        }
    }
    Ok(SystemBlocks {
        coupling: b,
        displacement: d,
        s,
        labels,
        groups: g,
        ..blocks.clone()
    })
}

/// The Hermitian matrix `[[S (x) 1, B], [B^+, D]]`.
pub fn full_matrix(blocks: &SystemBlocks) -> Array2<c64> {
    let ns = blocks.system_dim;
    let m = blocks.multiplicity;
    let nx = ns * m;
    let ny = blocks.displacement.nrows();
    let mut out = Array2::zeros((nx + ny, nx + ny));
    for l in 0..m {
        for k in 0..m {
            for nn in 0..ns {
                out[[l * ns + nn, k * ns + nn]] = blocks.overlap[[l, k]];
            }
        }
    }
    for r in 0..nx {
        for c in 0..ny {
            let v = blocks.coupling[[r, c]];
            out[[r, nx + c]] = v;
            out[[nx + c, r]] = v.conj();
        }
    }
    for r in 0..ny {
        for c in 0..ny {
            out[[nx + r, nx + c]] = blocks.displacement[[r, c]];
        }
    }
    out
}

/// `[r; s]`.
pub fn full_rhs(blocks: &SystemBlocks) -> Array1<c64> {
    let mut v = Array1::zeros(blocks.r.len() + blocks.s.len());
    for (i, z) in blocks.r.iter().chain(blocks.s.iter()).enumerate() {
        v[i] = *z;
    }
    v
}

/// Solves the (folded) system by LU with partial pivoting.
pub fn solve(blocks: &SystemBlocks, rcond_floor: f64) -> Result<LinearSolution> {
    let ns = blocks.system_dim;
    let m = blocks.multiplicity;
    let n = blocks.modes;
    let g = blocks.groups;
    let mat = full_matrix(blocks);
    let lu = LuFactors::factorize(&mat).map_err(|_| singular(0.0))?;
    if !(lu.rcond() >= rcond_floor) {
        return Err(singular(lu.rcond()));
    }
    let b: Vec<c64> = full_rhs(blocks).iter().map(|v| v * c64::new(0.0, -1.0)).collect();
    let mut z = b.clone();
    lu.solve_in_place(&mut z);
    let az = mat.dot(&ndarray::ArrayView1::from(&z[..]));
    let b_norm = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let r_norm = az.iter().zip(&b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
    let mut x = Array2::zeros((ns, m));
    for l in 0..m {
        for nn in 0..ns {
            x[[nn, l]] = z[l * ns + nn];
        }
    }
    let mut per_group = Array2::zeros((g, n));
    for j in 0..n {
        for a in 0..g {
            per_group[[a, j]] = z[ns * m + j * g + a];
        }
    }
    Ok(LinearSolution {
        x,
        fdot: unfold_rows(&per_group, &blocks.labels),
        rcond: lu.rcond(),
        size: mat.nrows(),
        reduced_size: mat.nrows(),
        residual: relative(r_norm, b_norm),
        strategy: Strategy::Dense,
    })
}
