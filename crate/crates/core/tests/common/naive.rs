//! Element-by-element construction of the variational system straight from
//! its index form, without any Hadamard or Kronecker structure.

use davydov::c64;
use davydov::ensemble::EnsembleState;
use davydov::linsys::{regularize_rho, Regularization};
use davydov::models::Hamiltonian;
use ndarray::{Array1, Array2};

fn overlap(f: &Array2<c64>, l: usize, k: usize) -> c64 {
    let mut e = c64::new(0.0, 0.0);
    for j in 0..f.ncols() {
        let (a, b) = (f[[l, j]], f[[k, j]]);
        e += a.conj() * b - 0.5 * a.norm_sqr() - 0.5 * b.norm_sqr();
    }
    e.exp()
}

/// Returns the matrix `M` and right-hand side `[r; s]` with `i M z = [r; s]`,
/// `z = [X_(l,n) at l*N_S+n; dalpha_(k,j) at N_S*M + j*M + k]`.
pub fn system<H: Hamiltonian>(state: &EnsembleState, model: &H, reg: &Regularization) -> (Array2<c64>, Array1<c64>) {
    let a = &state.coefficients;
    let f = &state.displacements;
    let (ns, m) = a.dim();
    let n = f.ncols();
    let nx = ns * m;
    let size = nx + n * m;
    let mut rho = Array2::zeros((m, m));
    for l in 0..m {
        for k in 0..m {
            for nn in 0..ns {
                rho[[l, k]] += a[[nn, l]].conj() * a[[nn, k]];
            }
        }
    }
    let rho_reg = regularize_rho(&rho, reg.eps_rho, reg.mode).unwrap();

    let mut mat = Array2::zeros((size, size));
    let mut rhs = Array1::zeros(size);
    // Projection onto <n, alpha_l|.
    for l in 0..m {
        for nn in 0..ns {
            let row = l * ns + nn;
            for k in 0..m {
                let s = overlap(f, l, k);
                mat[[row, k * ns + nn]] += s;
                for jj in 0..n {
                    mat[[row, nx + jj * m + k]] += a[[nn, k]] * f[[l, jj]].conj() * s;
                }
                let h = model.matrix(f.row(l), f.row(k));
                for np in 0..ns {
                    rhs[row] += h[[nn, np]] * a[[np, k]] * s;
                }
            }
        }
    }
    // Projection onto sum_n A*_nl <n, alpha_l| a_j.
    for j in 0..n {
        for l in 0..m {
            let row = nx + j * m + l;
            for k in 0..m {
                let s = overlap(f, l, k);
                for nn in 0..ns {
                    mat[[row, k * ns + nn]] += a[[nn, l]].conj() * f[[k, j]] * s;
                }
                for jj in 0..n {
                    let mut v = rho_reg[[l, k]] * f[[k, j]] * f[[l, jj]].conj() * s;
                    if jj == j {
                        v += rho_reg[[l, k]] * s;
                    }
                    mat[[row, nx + jj * m + k]] += v;
                }
                let h = model.matrix(f.row(l), f.row(k));
                let dh = model.derivative(f.row(l), f.row(k), j);
                for nn in 0..ns {
                    for np in 0..ns {
                        rhs[row] += a[[nn, l]].conj() * (f[[k, j]] * h[[nn, np]] + dh[[nn, np]]) * a[[np, k]] * s;
                    }
                }
            }
        }
    }
    (mat, rhs)
}
