//! Exact Schur reductions of the folded saddle-point system.
//!
//! In matrix form, with `R = -i r` (`N_S x M`), `V = -i s` (`M x N`), the
//! solution `Y = dF/dt` and `w = conj(F) Y^T`, the two block rows read
//!
//! ```text
//! X S^T + A (S o w)^T            = R
//! P^T (G1 Y + C F)               = P^T V,   C = S o (A^+ X) + G2 o w
//! ```
//!
//! where `P` is the group membership matrix and `Y = P Yhat`. Eliminating `X`
//! gives `C = C0 + L(w)` with `C0 = S o (A^+ R S^-T)` and
//! `L(w) = G2 o w - S o (rho (S o w)^T S^-T)`.
//!
//! * `ModeSchur` keeps `Yhat` (`g N` unknowns): the Schur complement of the
//!   coefficient sector, folded over groups.
//! * `PairReduced` keeps `Z = Yhat F^+` (`g M` unknowns). Since
//!   `w^T = P Z`, multiplying the displacement row by `F^+` gives
//!   `G1f Z + P^T L(w) F F^+ = P^T (V F^+ - C0 F F^+)` with
//!   `G1f = P^T G1 P`; `Yhat` then follows from one solve with `G1f`.
//! * `Subspace` splits `Y` along `span(alpha_k)` and its complement and
//!   keeps `g r` unknowns, `r <= M` (see `solve_subspace`).
//!
//! The reductions lose accuracy when coherent states cluster, so each
//! solution is polished by iterative refinement against the residual of the
//! unreduced block rows, reusing the factorizations.

use ndarray::Array2;

use super::lu::LuFactors;
use super::{conj_t, relative, singular, unfold_rows, Kernel, LinearSolution, Strategy};
use crate::c64;
use crate::ensemble::EnsembleState;
use crate::error::Result;

/// Refinement sweeps after the first solve.
const REFINE_SWEEPS: usize = 3;

struct Prep {
    sinv: Array2<c64>,
    sinv_t: Array2<c64>,
    labels: Vec<usize>,
    groups: usize,
    r_hat: Array2<c64>,
    v_hat: Array2<c64>,
}

fn factor(a: &Array2<c64>, floor: f64) -> Result<LuFactors> {
    let lu = LuFactors::factorize(a).map_err(|_| singular(0.0))?;
    if !(lu.rcond() >= floor) {
        return Err(singular(lu.rcond()));
    }
    Ok(lu)
}

fn prepare(state: &EnsembleState, k: &Kernel, floor: f64) -> Result<Prep> {
    let minus_i = c64::new(0.0, -1.0);
    let s_lu = factor(&k.s, floor)?;
    let sinv = s_lu.inverse();
    let sinv_t = sinv.t().to_owned();
    Ok(Prep {
        sinv,
        sinv_t,
        labels: state.partition.labels(),
        groups: state.partition.group_count(),
        r_hat: k.r.mapv(|z| z * minus_i),
        v_hat: k.s_vec.mapv(|z| z * minus_i),
    })
}

/// `C0 = S o (A^+ R S^-T)`.
fn c0_of(state: &EnsembleState, k: &Kernel, p: &Prep, r_hat: &Array2<c64>) -> Array2<c64> {
    &k.s * &conj_t(&state.coefficients).dot(r_hat).dot(&p.sinv_t)
}

fn fold_square(a: &Array2<c64>, labels: &[usize], groups: usize) -> Array2<c64> {
    let mut out = Array2::zeros((groups, groups));
    for (l, &gl) in labels.iter().enumerate() {
        for (q, &gq) in labels.iter().enumerate() {
            out[[gl, gq]] += a[[l, q]];
        }
    }
    out
}

fn fold_rows(a: &Array2<c64>, labels: &[usize], groups: usize) -> Array2<c64> {
    let mut out = Array2::zeros((groups, a.ncols()));
    for (l, &gl) in labels.iter().enumerate() {
        for c in 0..a.ncols() {
            out[[gl, c]] += a[[l, c]];
        }
    }
    out
}

/// `X = (R - A (S o w)^T) S^-T`.
fn coefficients_from_w(state: &EnsembleState, k: &Kernel, p: &Prep, r_hat: &Array2<c64>, w: &Array2<c64>) -> Array2<c64> {
    let sw_t = (&k.s * w).reversed_axes();
    (r_hat - &state.coefficients.dot(&sw_t)).dot(&p.sinv_t)
}

/// Residual of both block rows. The displacement residual is folded and
/// stored on group-label rows `0..g` of an `M x N` array, which is all the
/// reduced solvers read from `V`.
fn residual(
    state: &EnsembleState,
    k: &Kernel,
    p: &Prep,
    x: &Array2<c64>,
    y: &Array2<c64>,
) -> (Array2<c64>, Array2<c64>, f64) {
    let f = &state.displacements;
    let w = f.mapv(|z| z.conj()).dot(&y.t());
    let r1 = &p.r_hat - &x.dot(&k.s.t()) - &state.coefficients.dot(&(&k.s * &w).t());
    let c = &k.s * &conj_t(&state.coefficients).dot(x) + &k.g_cross * &w;
    let r2 = fold_rows(&(&p.v_hat - &k.g_id.dot(y) - &c.dot(f)), &p.labels, p.groups);
    let mut v = Array2::zeros(f.raw_dim());
    v.slice_mut(ndarray::s![..p.groups, ..]).assign(&r2);
    let size = r1.iter().chain(r2.iter()).map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    (r1, v, size)
}

/// Runs `solve` and refines its answer against the unreduced residual,
/// keeping the iterate with the smallest residual.
fn refine(
    state: &EnsembleState,
    k: &Kernel,
    p: &Prep,
    solve: impl Fn(&Array2<c64>, &Array2<c64>) -> (Array2<c64>, Array2<c64>),
) -> (Array2<c64>, Array2<c64>, f64) {
    let (mut x, mut y) = solve(&p.r_hat, &fold_v(&p.v_hat, p));
    let (mut r1, mut r2, mut size) = residual(state, k, p, &x, &y);
    for _ in 0..REFINE_SWEEPS {
        if size == 0.0 {
            break;
        }
        let (dx, dy) = solve(&r1, &r2);
        let (nx, ny) = (&x + &dx, &y + &dy);
        let (n1, n2, nsize) = residual(state, k, p, &nx, &ny);
        if !(nsize < size) {
            break;
        }
        x = nx;
        y = ny;
        r1 = n1;
        r2 = n2;
        size = nsize;
    }
    let b = fold_v(&p.v_hat, p);
    let b_norm = p.r_hat.iter().chain(b.iter()).map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    (x, y, relative(size, b_norm))
}

/// Folded `V` on group-label rows, the layout `residual` produces.
fn fold_v(v: &Array2<c64>, p: &Prep) -> Array2<c64> {
    let mut out = Array2::zeros(v.raw_dim());
    out.slice_mut(ndarray::s![..p.groups, ..])
        .assign(&fold_rows(v, &p.labels, p.groups));
    out
}

/// Folded mode Schur complement for displacements `f` (`M x n`). `f` is
/// either the full displacement matrix or its coordinates in a basis of the
/// displacement span.
fn mode_schur_matrix(k: &Kernel, p: &Prep, f: &Array2<c64>) -> Array2<c64> {
    let m = f.nrows();
    let n = f.ncols();
    let g = p.groups;
    let nm = n * m;

    // U[(i,l),(j,q)] = sum_k S_lk F_ki (S^-1 diag(conj F_:j) S)_kq
    let mut e = Array2::zeros((nm, m));
    for i in 0..n {
        for l in 0..m {
            for kk in 0..m {
                e[[i * m + l, kk]] = k.s[[l, kk]] * f[[kk, i]];
            }
        }
    }
    let mut v = Array2::zeros((m, nm));
    for j in 0..n {
        let mut scaled = p.sinv.clone();
        for col in 0..m {
            let c = f[[col, j]].conj();
            scaled.column_mut(col).mapv_inplace(|z| z * c);
        }
        let vj = scaled.dot(&k.s);
        v.slice_mut(ndarray::s![.., j * m..(j + 1) * m]).assign(&vj);
    }
    let mut t = e.dot(&v);
    for i in 0..n {
        for l in 0..m {
            let row = i * m + l;
            for j in 0..n {
                let al = f[[l, j]].conj();
                for q in 0..m {
                    let col = j * m + q;
                    let mut val = k.g_cross[[l, q]] * al * f[[q, i]] - k.rho[[l, q]] * t[[row, col]];
                    if i == j {
                        val += k.g_id[[l, q]];
                    }
                    t[[row, col]] = val;
                }
            }
        }
    }
    let mut tf = Array2::zeros((n * g, n * g));
    for i in 0..n {
        for l in 0..m {
            let row = i * g + p.labels[l];
            for j in 0..n {
                for q in 0..m {
                    tf[[row, j * g + p.labels[q]]] += t[[i * m + l, j * m + q]];
                }
            }
        }
    }
    tf
}

/// Solves the mode Schur system for `Y` (`M x n`) given the folded
/// displacement right-hand side on rows `0..g`.
fn mode_schur_apply(
    state: &EnsembleState,
    k: &Kernel,
    p: &Prep,
    lu: &LuFactors,
    f: &Array2<c64>,
    r_hat: &Array2<c64>,
    v_folded: &Array2<c64>,
) -> (Array2<c64>, Array2<c64>) {
    let n = f.ncols();
    let g = p.groups;
    let c0 = c0_of(state, k, p, r_hat);
    let c0f = fold_rows(&c0.dot(f), &p.labels, g);
    let mut rhs = vec![c64::new(0.0, 0.0); n * g];
    for i in 0..n {
        for a in 0..g {
            rhs[i * g + a] = v_folded[[a, i]] - c0f[[a, i]];
        }
    }
    lu.solve_in_place(&mut rhs);
    let y_hat = Array2::from_shape_fn((g, n), |(a, j)| rhs[j * g + a]);
    let y = unfold_rows(&y_hat, &p.labels);
    let w = f.mapv(|z| z.conj()).dot(&y.t());
    (coefficients_from_w(state, k, p, r_hat, &w), y)
}

pub(super) fn solve_mode_schur(state: &EnsembleState, k: &Kernel, floor: f64) -> Result<LinearSolution> {
    let p = prepare(state, k, floor)?;
    let m = state.multiplicity();
    let n = state.mode_count();
    let f = &state.displacements;
    let lu = factor(&mode_schur_matrix(k, &p, f), floor)?;
    let solve = |r_hat: &Array2<c64>, v_folded: &Array2<c64>| mode_schur_apply(state, k, &p, &lu, f, r_hat, v_folded);
    let (x, y, residual) = refine(state, k, &p, solve);
    Ok(LinearSolution {
        x,
        fdot: y,
        rcond: lu.rcond(),
        size: state.system_dim() * m + n * p.groups,
        reduced_size: n * p.groups,
        residual,
        strategy: Strategy::ModeSchur,
    })
}

/// Orthonormal basis (`N x r`) of the span of the displacement rows, by
/// Gram-Schmidt with one reorthogonalization pass. Rows that add no new
/// direction are skipped.
fn displacement_basis(f: &Array2<c64>) -> Array2<c64> {
    let n = f.ncols();
    let scale = f.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut cols: Vec<ndarray::Array1<c64>> = Vec::new();
    for row in f.rows() {
        let mut v = row.to_owned();
        for _ in 0..2 {
            for q in &cols {
                let c: c64 = q.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                v.zip_mut_with(q, |x, y| *x -= c * y);
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-13 * scale && cols.len() < n {
            cols.push(v.mapv(|z| z / norm));
        }
    }
    if cols.is_empty() {
        let mut e0 = ndarray::Array1::zeros(n);
        e0[0] = c64::new(1.0, 0.0);
        cols.push(e0);
    }
    Array2::from_shape_fn((n, cols.len()), |(i, a)| cols[a][i])
}

/// Mode Schur complement restricted to the displacement span.
///
/// The coupling to the coefficient sector only sees `Y` through
/// `w = conj(F) Y^T` and only feeds back along `C F`, both of which live in
/// `U = span(alpha_k)`. With an orthonormal basis `Q` of `U`, the component
/// of `Y` orthogonal to `U` decouples and solves with `G1f` alone, while the
/// component in `U` is the mode Schur system written in `r <= M`
/// coordinates, `F Q*`.
pub(super) fn solve_subspace(state: &EnsembleState, k: &Kernel, floor: f64) -> Result<LinearSolution> {
    let p = prepare(state, k, floor)?;
    let m = state.multiplicity();
    let n = state.mode_count();
    let g = p.groups;
    let q = displacement_basis(&state.displacements);
    let q_conj = q.mapv(|z| z.conj());
    let q_t = q.t().to_owned();
    let fq = state.displacements.dot(&q_conj);
    let r = q.ncols();
    let lu = factor(&mode_schur_matrix(k, &p, &fq), floor)?;
    let gf_lu = factor(&fold_square(&k.g_id, &p.labels, g), floor)?;

    let solve = |r_hat: &Array2<c64>, v_folded: &Array2<c64>| {
        let vf = v_folded.slice(ndarray::s![..g, ..]).to_owned();
        let v_par = vf.dot(&q_conj);
        let v_perp = &vf - &v_par.dot(&q_t);
        let mut v_red = Array2::zeros((m, r));
        v_red.slice_mut(ndarray::s![..g, ..]).assign(&v_par);
        let (x, y_par) = mode_schur_apply(state, k, &p, &lu, &fq, r_hat, &v_red);
        let y_perp = unfold_rows(&gf_lu.solve_columns(&v_perp), &p.labels);
        (x, y_par.dot(&q_t) + y_perp)
    };
    let (x, y, residual) = refine(state, k, &p, solve);
    Ok(LinearSolution {
        x,
        fdot: y,
        rcond: lu.rcond().min(gf_lu.rcond()),
        size: state.system_dim() * m + n * g,
        reduced_size: r * g,
        residual,
        strategy: Strategy::Subspace,
    })
}

pub(super) fn solve_pair_reduced(state: &EnsembleState, k: &Kernel, floor: f64) -> Result<LinearSolution> {
    let p = prepare(state, k, floor)?;
    let m = state.multiplicity();
    let n = state.mode_count();
    let ns = state.system_dim();
    let g = p.groups;
    let lab = &p.labels;
    let f = &state.displacements;

    let g1f = fold_square(&k.g_id, lab, g);
    // Omega = F F^+
    let f_dag = conj_t(f);
    let omega = f.dot(&f_dag);

    // Zm[u, (a,v)] = sum_q S_uq Sinv_qa Omega_qv
    let mut zm = Array2::zeros((m, m * m));
    for v in 0..m {
        let mut scaled = k.s.clone();
        for q in 0..m {
            let c = omega[[q, v]];
            scaled.column_mut(q).mapv_inplace(|z| z * c);
        }
        let zv = scaled.dot(&p.sinv);
        for u in 0..m {
            for a in 0..m {
                zm[[u, a * m + v]] = zv[[u, a]];
            }
        }
    }
    // E[(c,v),(d,a)] = G1f_cd delta_av
    //   + sum_{u in c, b in d} (delta_ua G2_ab Omega_bv - rho_ub S_ab Zm[u,(a,v)])
    let mut t = Array2::zeros((g * m, g * m));
    for c in 0..g {
        for d in 0..g {
            for v in 0..m {
                t[[c * m + v, d * m + v]] += g1f[[c, d]];
            }
        }
    }
    for u in 0..m {
        let c = lab[u];
        for b in 0..m {
            let d = lab[b];
            let rho_ub = k.rho[[u, b]];
            for a in 0..m {
                let col = d * m + a;
                let sab = k.s[[a, b]] * rho_ub;
                let g2 = if u == a { Some(k.g_cross[[a, b]]) } else { None };
                for v in 0..m {
                    let mut val = -sab * zm[[u, a * m + v]];
                    if let Some(g2) = g2 {
                        val += g2 * omega[[b, v]];
                    }
                    t[[c * m + v, col]] += val;
                }
            }
        }
    }
    let lu = factor(&t, floor)?;
    let gf_lu = factor(&g1f, floor)?;

    let solve = |r_hat: &Array2<c64>, v_folded: &Array2<c64>| {
        let c0 = c0_of(state, k, &p, r_hat);
        let vf = v_folded.slice(ndarray::s![..g, ..]);
        let rhs_mat = vf.dot(&f_dag) - fold_rows(&c0.dot(&omega), lab, g);
        let mut rhs: Vec<c64> = rhs_mat.iter().copied().collect();
        lu.solve_in_place(&mut rhs);
        // w_ab = Z[label(b), a]
        let w = Array2::from_shape_fn((m, m), |(a, b)| rhs[lab[b] * m + a]);
        let sw_t = (&k.s * &w).reversed_axes();
        let lw = &k.g_cross * &w - &k.s * &k.rho.dot(&sw_t).dot(&p.sinv_t);
        let cf = fold_rows(&(&c0 + &lw).dot(f), lab, g);
        let y_hat = gf_lu.solve_columns(&(&vf - &cf));
        let y = unfold_rows(&y_hat, lab);
        (coefficients_from_w(state, k, &p, r_hat, &w), y)
    };
    let (x, y, residual) = refine(state, k, &p, solve);
    Ok(LinearSolution {
        x,
        fdot: y,
        rcond: lu.rcond(),
        size: ns * m + n * g,
        reduced_size: g * m,
        residual,
        strategy: Strategy::PairReduced,
    })
}
