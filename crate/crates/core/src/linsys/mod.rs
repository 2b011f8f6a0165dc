//! The variational linear system for `(X, dF/dt)` and its solution.
//!
//! With `x_(l,n) = X_nl` and `y_(j,k) = dalpha_kj/dt` the equations read
//! `i [[S (x) 1, B], [B^+, D]] [x; y] = [r; s]`. Merged coherent states share
//! their displacement derivatives, which folds the `y` sector. Three solvers
//! are provided: the dense reference and two exact Schur reductions that
//! factorize a smaller matrix.

pub mod dense;
pub mod lu;
mod reduced;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::c64;
use crate::ensemble::{coefficient_gram, EnsembleState};
use crate::error::{Error, Result};
use crate::models::Hamiltonian;

pub use dense::{assemble, fold_apoptosis, full_matrix, full_rhs, solve, SystemBlocks};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationMode {
    /// Eigenvalue map `l -> l + eps exp(-l/eps)`.
    #[default]
    Exp,
    /// `rho + eps 1`.
    Identity,
}

/// Which part of the system receives the regularization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationTarget {
    /// Regularized `rho` enters the displacement block only.
    #[default]
    Rho,
    /// Adds `1_N (x) eps exp(-rho/eps)` to the displacement block and leaves
    /// `rho` alone. Kept for comparisons; it is known to destabilize runs.
    DisplacementBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularization {
    pub eps_rho: f64,
    #[serde(default)]
    pub mode: RegularizationMode,
    #[serde(default, skip_serializing)]
    pub target: RegularizationTarget,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization {
            eps_rho: 1e-8,
            mode: RegularizationMode::Exp,
            target: RegularizationTarget::Rho,
        }
    }
}

/// Regularizes a Hermitian matrix so it becomes strictly positive definite.
pub fn regularize_rho(rho: &Array2<c64>, eps_rho: f64, mode: RegularizationMode) -> Result<Array2<c64>> {
    let m = rho.nrows();
    if rho.ncols() != m {
        return Err(Error::Dimension {
            what: "rho",
            expected: m,
            actual: rho.ncols(),
        });
    }
    if !(eps_rho >= 0.0) {
        return Err(Error::Config(format!("eps_rho must be >= 0, got {eps_rho}")));
    }
    let scale = rho.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for l in 0..m {
        for k in 0..=l {
            if (rho[[l, k]] - rho[[k, l]].conj()).norm() > 1e-12 * scale {
                return Err(Error::Contract(format!("rho is not Hermitian at ({l}, {k})")));
            }
        }
    }
    if eps_rho == 0.0 {
        return Ok(rho.clone());
    }
    match mode {
        RegularizationMode::Identity => {
            let mut out = rho.clone();
            for l in 0..m {
                out[[l, l]] += eps_rho;
            }
            Ok(out)
        }
        RegularizationMode::Exp => Ok(matrix_function(rho, |x| x + eps_rho * (-x / eps_rho).exp())?),
    }
}

/// Applies `f` to the eigenvalues of a Hermitian matrix; the result is
/// Hermitian bit for bit.
pub(crate) fn matrix_function(a: &Array2<c64>, f: impl Fn(f64) -> f64) -> Result<Array2<c64>> {
    let m = a.nrows();
    let (w, v) = lu::eigh(a)?;
    let mut out = Array2::zeros((m, m));
    for l in 0..m {
        for k in l..m {
            let mut acc = c64::new(0.0, 0.0);
            for p in 0..m {
                acc += v[[l, p]] * f(w[p]) * v[[k, p]].conj();
            }
            out[[l, k]] = acc;
            out[[k, l]] = acc.conj();
        }
        out[[l, l]].im = 0.0;
    }
    Ok(out)
}

/// Solver route for the folded system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Full saddle-point matrix, LU with partial pivoting.
    Dense,
    /// Schur complement onto the displacement sector (`g N` unknowns).
    ModeSchur,
    /// Reduction onto `dF_hat F^+` (`g M` unknowns).
    PairReduced,
    /// Mode Schur complement restricted to the span of the displacements
    /// (at most `g M` unknowns), plus a decoupled `g x g` solve for the rest.
    Subspace,
    /// The subspace route, falling back to the mode Schur complement when its
    /// residual is poor.
    #[default]
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSettings {
    #[serde(default)]
    pub regularization: Regularization,
    #[serde(default)]
    pub strategy: Strategy,
    /// Systems whose reciprocal condition estimate falls below this are
    /// treated as singular.
    #[serde(default = "default_rcond_floor")]
    pub rcond_floor: f64,
}

fn default_rcond_floor() -> f64 {
    f64::EPSILON
}

impl Default for LinearSettings {
    fn default() -> Self {
        LinearSettings {
            regularization: Regularization::default(),
            strategy: Strategy::Auto,
            rcond_floor: default_rcond_floor(),
        }
    }
}

/// Time derivatives of one state.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeSet {
    /// Auxiliary variables `X`, `N_S x M`.
    pub x: Array2<c64>,
    /// `dalpha/dt`, `M x N`.
    pub fdot: Array2<c64>,
    /// `dA/dt`, `N_S x M`.
    pub adot: Array2<c64>,
}

/// Solution of the linear system plus solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSolution {
    pub x: Array2<c64>,
    pub fdot: Array2<c64>,
    /// Reciprocal condition estimate of the factorized matrix.
    pub rcond: f64,
    /// Size of the folded saddle-point system.
    pub size: usize,
    /// Size of the matrix actually factorized.
    pub reduced_size: usize,
    /// Relative residual of the unreduced system.
    pub residual: f64,
    pub strategy: Strategy,
}

/// Relative residual beyond which `Auto` abandons the subspace reduction.
pub const REDUCED_RESIDUAL_LIMIT: f64 = 1e-10;

pub(crate) fn relative(r_norm: f64, b_norm: f64) -> f64 {
    if b_norm > 0.0 {
        r_norm / b_norm
    } else {
        r_norm
    }
}

/// Per-pair quantities shared by every solver route.
pub(crate) struct Kernel {
    pub s: Array2<c64>,
    pub rho: Array2<c64>,
    pub rho_reg: Array2<c64>,
    /// Weight of the `delta_ij` term of the displacement block.
    pub g_id: Array2<c64>,
    /// Weight of the `conj(alpha_lj) alpha_ki` term.
    pub g_cross: Array2<c64>,
    /// `r`, stored `[n, l]`.
    pub r: Array2<c64>,
    /// `s`, stored `[l, i]`.
    pub s_vec: Array2<c64>,
}

pub(crate) fn kernel<H: Hamiltonian + ?Sized>(state: &EnsembleState, model: &H, reg: &Regularization) -> Result<Kernel> {
    let ns = state.system_dim();
    let m = state.multiplicity();
    let n = state.mode_count();
    if model.system_dim() != ns {
        return Err(Error::Dimension {
            what: "model system dimension",
            expected: ns,
            actual: model.system_dim(),
        });
    }
    if model.mode_count() != n {
        return Err(Error::Dimension {
            what: "model mode count",
            expected: n,
            actual: model.mode_count(),
        });
    }
    let a = &state.coefficients;
    let f = &state.displacements;
    let s = state.overlap_matrix();
    let rho = coefficient_gram(a);

    let mut r = Array2::zeros((ns, m));
    let mut s_vec = Array2::zeros((m, n));
    let mut hbuf = Array2::zeros((ns, ns));
    let mut contraction = vec![c64::new(0.0, 0.0); n];
    let mut ha = vec![c64::new(0.0, 0.0); ns];
    for l in 0..m {
        for k in 0..m {
            model.matrix_into(f.row(l), f.row(k), &mut hbuf);
            model.contract_derivative(f.row(l), f.row(k), a.column(l), a.column(k), &mut contraction);
            let slk = s[[l, k]];
            let mut rho_h = c64::new(0.0, 0.0);
            for nn in 0..ns {
                let mut acc = c64::new(0.0, 0.0);
                for np in 0..ns {
                    acc += hbuf[[nn, np]] * a[[np, k]];
                }
                ha[nn] = acc;
                rho_h += a[[nn, l]].conj() * acc;
            }
            let finite = |z: &c64| z.re.is_finite() && z.im.is_finite();
            if !ha.iter().all(finite) || !contraction.iter().all(finite) || !finite(&slk) {
                return Err(Error::Evaluation { bra: l, ket: k });
            }
            for nn in 0..ns {
                r[[nn, l]] += slk * ha[nn];
            }
            for i in 0..n {
                s_vec[[l, i]] += slk * (rho_h * f[[k, i]] + contraction[i]);
            }
        }
    }

    let (rho_reg, g_id, g_cross) = match reg.target {
        RegularizationTarget::Rho => {
            let rho_reg = regularize_rho(&rho, reg.eps_rho, reg.mode)?;
            let g = &rho_reg * &s;
            (rho_reg, g.clone(), g)
        }
        RegularizationTarget::DisplacementBlock => {
            let g = &rho * &s;
            let eps = reg.eps_rho;
            let extra = if eps > 0.0 {
                matrix_function(&rho, |x| eps * (-x / eps).exp())?
            } else {
                Array2::zeros((m, m))
            };
            (rho.clone(), &g + &extra, g)
        }
    };
    Ok(Kernel {
        s,
        rho,
        rho_reg,
        g_id,
        g_cross,
        r,
        s_vec,
    })
}

/// `dA_nk = X_nk + A_nk sum_j Re(conj(alpha_kj) dalpha_kj)`.
pub fn recover_adot(x: &Array2<c64>, state: &EnsembleState, fdot: &Array2<c64>) -> Result<Array2<c64>> {
    let (ns, m) = state.coefficients.dim();
    if x.dim() != (ns, m) {
        return Err(Error::Dimension {
            what: "auxiliary variables",
            expected: ns * m,
            actual: x.len(),
        });
    }
    if fdot.dim() != state.displacements.dim() {
        return Err(Error::Dimension {
            what: "displacement derivatives",
            expected: state.displacements.len(),
            actual: fdot.len(),
        });
    }
    let mut adot = x.clone();
    for k in 0..m {
        let corr: f64 = state
            .displacements
            .row(k)
            .iter()
            .zip(fdot.row(k).iter())
            .map(|(a, d)| 0.5 * (a * d.conj() + d * a.conj()).re)
            .sum();
        for nn in 0..ns {
            adot[[nn, k]] += state.coefficients[[nn, k]] * corr;
        }
    }
    Ok(adot)
}

/// Picks the concrete route for `Auto`.
pub fn resolve_strategy(strategy: Strategy, multiplicity: usize, modes: usize) -> Strategy {
    match strategy {
        Strategy::Auto => {
            if multiplicity <= modes {
                Strategy::Subspace
            } else {
                Strategy::ModeSchur
            }
        }
        s => s,
    }
}

/// Solves the folded system for the state with the configured route.
pub fn solve_state<H: Hamiltonian + ?Sized>(
    state: &EnsembleState,
    model: &H,
    settings: &LinearSettings,
) -> Result<LinearSolution> {
    let strategy = resolve_strategy(
        settings.strategy,
        state.multiplicity(),
        state.mode_count(),
    );
    let sol = match strategy {
        Strategy::Dense => {
            let blocks = assemble(state, model, &settings.regularization)?;
            let folded = fold_apoptosis(&blocks, &state.partition)?;
            solve(&folded, settings.rcond_floor)
        }
        Strategy::ModeSchur => {
            let k = kernel(state, model, &settings.regularization)?;
            reduced::solve_mode_schur(state, &k, settings.rcond_floor)
        }
        Strategy::PairReduced => {
            let k = kernel(state, model, &settings.regularization)?;
            reduced::solve_pair_reduced(state, &k, settings.rcond_floor)
        }
        Strategy::Subspace => {
            let k = kernel(state, model, &settings.regularization)?;
            let sol = reduced::solve_subspace(state, &k, settings.rcond_floor);
            let poor = match &sol {
                Ok(s) => !(s.residual <= REDUCED_RESIDUAL_LIMIT),
                Err(_) => true,
            };
            if settings.strategy == Strategy::Auto && poor {
                reduced::solve_mode_schur(state, &k, settings.rcond_floor)
            } else {
                sol
            }
        }
        Strategy::Auto => unreachable!(),
    };
    sol.map_err(|e| attach_pair(e, state))
}

/// Fills in the closest free pair of a singular-system error.
fn attach_pair(e: Error, state: &EnsembleState) -> Error {
    match e {
        Error::Singular { rcond, .. } => {
            let (a, b, d) = state.closest_free_pair().unwrap_or((0, 0, f64::INFINITY));
            Error::Singular {
                rcond,
                pair: (a, b),
                distance: d,
            }
        }
        other => other,
    }
}

pub(crate) fn singular(rcond: f64) -> Error {
    Error::Singular {
        rcond,
        pair: (0, 0),
        distance: f64::INFINITY,
    }
}

/// Full right-hand side of the equations of motion.
pub fn rhs<H: Hamiltonian + ?Sized>(
    state: &EnsembleState,
    model: &H,
    settings: &LinearSettings,
) -> Result<(DerivativeSet, LinearSolution)> {
    let sol = solve_state(state, model, settings)?;
    let adot = recover_adot(&sol.x, state, &sol.fdot)?;
    Ok((
        DerivativeSet {
            x: sol.x.clone(),
            fdot: sol.fdot.clone(),
            adot,
        },
        sol,
    ))
}

/// Expands per-group rows to all coherent states.
pub(crate) fn unfold_rows(per_group: &Array2<c64>, labels: &[usize]) -> Array2<c64> {
    let cols = per_group.ncols();
    let mut out = Array2::zeros((labels.len(), cols));
    for (k, &g) in labels.iter().enumerate() {
        out.row_mut(k).assign(&per_group.row(g));
    }
    out
}

pub(crate) fn conj_t(a: &Array2<c64>) -> Array2<c64> {
    a.t().mapv(|z| z.conj())
}
