//! Variational propagation with unnormalized coherent states
//! `||alpha) = exp(alpha a^+)|0>`, where all parameters enter holomorphically
//! and no auxiliary variables are needed.

use davydov::c64;
use davydov::ensemble::EnsembleState;
use davydov::linsys::lu::LuFactors;
use davydov::models::Hamiltonian;
use ndarray::{Array1, Array2};

/// `(B, F)` with `psi = sum_k sum_n B_nk |n> ||alpha_k)`.
#[derive(Clone, Debug)]
pub struct BargmannState {
    pub b: Array2<c64>,
    pub f: Array2<c64>,
}

impl BargmannState {
    pub fn from_normalized(state: &EnsembleState) -> Self {
        let mut b = state.coefficients.clone();
        for k in 0..b.ncols() {
            let w: f64 = state.displacements.row(k).iter().map(|z| z.norm_sqr()).sum();
            b.column_mut(k).mapv_inplace(|z| z * (-0.5 * w).exp());
        }
        BargmannState {
            b,
            f: state.displacements.clone(),
        }
    }

    pub fn to_normalized(&self, time: f64) -> EnsembleState {
        let mut a = self.b.clone();
        for k in 0..a.ncols() {
            let w: f64 = self.f.row(k).iter().map(|z| z.norm_sqr()).sum();
            a.column_mut(k).mapv_inplace(|z| z * (0.5 * w).exp());
        }
        EnsembleState::new(a, self.f.clone(), time).unwrap()
    }

    fn axpy(&self, h: f64, d: &(Array2<c64>, Array2<c64>)) -> Self {
        BargmannState {
            b: &self.b + &d.0.mapv(|z| z * h),
            f: &self.f + &d.1.mapv(|z| z * h),
        }
    }
}

fn kernel(f: &Array2<c64>, l: usize, k: usize) -> c64 {
    f.row(l).iter().zip(f.row(k).iter()).map(|(a, b)| a.conj() * b).sum::<c64>().exp()
}

/// `(dB/dt, dF/dt)`.
pub fn derivative<H: Hamiltonian>(st: &BargmannState, model: &H) -> (Array2<c64>, Array2<c64>) {
    let (ns, m) = st.b.dim();
    let n = st.f.ncols();
    let nx = ns * m;
    let size = nx + n * m;
    let (b, f) = (&st.b, &st.f);
    let mut mat = Array2::<c64>::zeros((size, size));
    let mut rhs = Array1::<c64>::zeros(size);
    for l in 0..m {
        for k in 0..m {
            let kk = kernel(f, l, k);
            let h = model.matrix(f.row(l), f.row(k));
            let mut rho = c64::new(0.0, 0.0);
            for nn in 0..ns {
                rho += b[[nn, l]].conj() * b[[nn, k]];
            }
            for nn in 0..ns {
                mat[[l * ns + nn, k * ns + nn]] += kk;
                for j in 0..n {
                    mat[[l * ns + nn, nx + k * n + j]] += b[[nn, k]] * f[[l, j]].conj() * kk;
                    mat[[nx + l * n + j, k * ns + nn]] += b[[nn, l]].conj() * f[[k, j]] * kk;
                }
                for np in 0..ns {
                    rhs[l * ns + nn] += h[[nn, np]] * b[[np, k]] * kk;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    mat[[nx + l * n + i, nx + k * n + j]] += rho * kk * (delta + f[[l, j]].conj() * f[[k, i]]);
                }
                let dh = model.derivative(f.row(l), f.row(k), i);
                for nn in 0..ns {
                    for np in 0..ns {
                        rhs[nx + l * n + i] += b[[nn, l]].conj() * (f[[k, i]] * h[[nn, np]] + dh[[nn, np]]) * b[[np, k]] * kk;
                    }
                }
            }
        }
    }
    let lu = LuFactors::factorize(&mat).expect("regular Bargmann system");
    let z = lu.solve(&rhs.mapv(|v| v * c64::new(0.0, -1.0)));
    let mut db = Array2::zeros((ns, m));
    let mut df = Array2::zeros((m, n));
    for k in 0..m {
        for nn in 0..ns {
            db[[nn, k]] = z[k * ns + nn];
        }
        for j in 0..n {
            df[[k, j]] = z[nx + k * n + j];
        }
    }
    (db, df)
}

/// Classical fourth-order Runge-Kutta with `steps` equal steps.
pub fn propagate<H: Hamiltonian>(start: &BargmannState, model: &H, t: f64, steps: usize) -> BargmannState {
    let h = t / steps as f64;
    let mut st = start.clone();
    for _ in 0..steps {
        let k1 = derivative(&st, model);
        let k2 = derivative(&st.axpy(0.5 * h, &k1), model);
        let k3 = derivative(&st.axpy(0.5 * h, &k2), model);
        let k4 = derivative(&st.axpy(h, &k3), model);
        st = BargmannState {
            b: &st.b + &((&k1.0 + &k2.0.mapv(|z| 2.0 * z) + &k3.0.mapv(|z| 2.0 * z) + &k4.0).mapv(|z| z * (h / 6.0))),
            f: &st.f + &((&k1.1 + &k2.1.mapv(|z| 2.0 * z) + &k3.1.mapv(|z| 2.0 * z) + &k4.1).mapv(|z| z * (h / 6.0))),
        };
    }
    st
}
