mod common;

use common::{cplx, max_diff, random_model, rng};
use davydov::c64;
use davydov::ensemble::overlap;
use davydov::models::{
    discretize_holstein_sd, discretize_subohmic, holstein_spectral_density, DensityConvention, Hamiltonian, Holstein,
    HolsteinCoupling, HolsteinParams, ExcitonStart, SpinBoson, SpinBosonParams,
};
use davydov::oracle::{fock_hamiltonian, product_state, FockTruncation};
use ndarray::{Array1, Array2};
use rand::Rng;

fn vector(r: &mut rand_chacha::ChaCha8Rng, n: usize, scale: f64) -> Array1<c64> {
    (0..n).map(|_| cplx(r, scale)).collect()
}

#[test]
fn swapping_bra_and_ket_gives_the_adjoint() {
    let mut r = rng(30);
    for case in 0..30 {
        let n = r.random_range(1..=4) * 2;
        let model = random_model(&mut r, case, n);
        let (a, b) = (vector(&mut r, n, 1.0), vector(&mut r, n, 1.0));
        let h = model.matrix(a.view(), b.view());
        let back = model.matrix(b.view(), a.view()).t().mapv(|z| z.conj());
        assert!(max_diff(&h, &back) < 1e-14, "case {case}");
    }
}

#[test]
fn derivative_matches_finite_differences() {
    let mut r = rng(31);
    let step = 1e-5;
    for case in 0..15 {
        let n = 4;
        let model = random_model(&mut r, case, n);
        let (a, b) = (vector(&mut r, n, 1.0), vector(&mut r, n, 1.0));
        for i in 0..n {
            // H depends on conj(bra) holomorphically, so a real shift of the
            // bra is a shift of its conjugate by the same amount.
            let mut up = a.clone();
            let mut down = a.clone();
            up[i] += step;
            down[i] -= step;
            let fd = (model.matrix(up.view(), b.view()) - model.matrix(down.view(), b.view())).mapv(|z| z / (2.0 * step));
            let mut up = a.clone();
            let mut down = a.clone();
            up[i] -= c64::new(0.0, step);
            down[i] += c64::new(0.0, step);
            let fd_im = (model.matrix(up.view(), b.view()) - model.matrix(down.view(), b.view()))
                .mapv(|z| z / c64::new(0.0, 2.0 * step));
            let d = model.derivative(a.view(), b.view(), i);
            assert!(max_diff(&fd, &d) < 1e-8, "case {case} mode {i}");
            assert!(max_diff(&fd_im, &d) < 1e-8, "case {case} mode {i} (imaginary)");
        }
    }
}

#[test]
fn contracted_derivative_agrees_with_the_matrices() {
    let mut r = rng(32);
    for case in 0..15 {
        let n = 4;
        let model = random_model(&mut r, case, n);
        let ns = model.system_dim();
        let (a, b) = (vector(&mut r, n, 1.0), vector(&mut r, n, 1.0));
        let (ca, cb) = (vector(&mut r, ns, 1.0), vector(&mut r, ns, 1.0));
        let mut out = vec![c64::new(0.0, 0.0); n];
        model.contract_derivative(a.view(), b.view(), ca.view(), cb.view(), &mut out);
        for (i, o) in out.iter().enumerate() {
            let d = model.derivative(a.view(), b.view(), i);
            let want = ca.mapv(|z| z.conj()).dot(&d.dot(&cb));
            assert!((o - want).norm() < 1e-13, "case {case} mode {i}");
        }
    }
}

#[test]
fn coherent_state_elements_match_the_fock_hamiltonian() {
    let mut r = rng(33);
    let n = 2;
    for case in 0..6 {
        let model = random_model(&mut r, case, n);
        let ns = model.system_dim();
        let trunc = FockTruncation::new(30, n, ns);
        let h = fock_hamiltonian(&model, &trunc).unwrap();
        let (a, b) = (vector(&mut r, n, 0.6), vector(&mut r, n, 0.6));
        let s = overlap(a.view(), b.view()).unwrap();
        let cs = model.matrix(a.view(), b.view());
        let mut fock = Array2::zeros((ns, ns));
        for nn in 0..ns {
            for np in 0..ns {
                let mut e = Array1::zeros(ns);
                e[nn] = c64::new(1.0, 0.0);
                let u = product_state(e.view(), a.view(), &trunc).unwrap();
                let mut e = Array1::zeros(ns);
                e[np] = c64::new(1.0, 0.0);
                let v = product_state(e.view(), b.view(), &trunc).unwrap();
                fock[[nn, np]] = u.mapv(|z| z.conj()).dot(&h.dot(&v)) / s;
            }
        }
        assert!(max_diff(&fock, &cs) < 1e-9, "case {case}: {:e}", max_diff(&fock, &cs));
    }
}

#[test]
fn subohmic_discretization_approaches_the_continuum() {
    let (alpha, s, wc) = (0.05, 0.25, 1.0);
    // sum_j lambda_j^2 w_j tends to 2 alpha wc^2 Gamma(s + 2).
    let want = 2.0 * alpha * wc * wc * 1.25 * 0.25 * 3.625_609_908_221_908;
    let mut last = f64::INFINITY;
    for m in [10, 100, 4000] {
        let (w, l) = discretize_subohmic(alpha, s, wc, m, DensityConvention::Pi).unwrap();
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        for (w, l) in w.iter().zip(&l) {
            assert!((l * l * m as f64 - 2.0 * alpha * wc.powf(2.0 - s) * w.powf(s)).abs() < 1e-14);
        }
        let err = (w.iter().zip(&l).map(|(w, l)| l * l * w).sum::<f64>() - want).abs() / want;
        assert!(err < last, "M={m}");
        last = err;
    }
    assert!(last < 1e-3, "{last:e}");
}

#[test]
fn spin_boson_equilibrium_is_shifted_by_the_coupling() {
    let sb = SpinBoson::from_params(&SpinBosonParams {
        delta: -0.1,
        alpha: 0.05,
        s: 0.25,
        omega_c: 1.0,
        modes: 10,
        convention: DensityConvention::Pi,
    })
    .unwrap();
    let eq = sb.equilibrium_displacement();
    // The spin-up surface is minimized where dH/dalpha* vanishes.
    let f: Array1<c64> = eq.iter().map(|x| c64::new(*x, 0.0)).collect();
    for i in 0..10 {
        let d = sb.derivative(f.view(), f.view(), i);
        assert!(d[[0, 0]].norm() < 1e-14, "mode {i}");
    }
}

#[test]
fn holstein_band_and_huang_rhys() {
    let p = HolsteinParams {
        sites: 16,
        hopping: 0.1,
        omega0: 1.0,
        bandwidth: 0.1,
        coupling: HolsteinCoupling::PerMode { g: 0.4 },
        start: ExcitonStart::Site0,
    };
    let h = Holstein::new(&p).unwrap();
    assert_eq!(h.sites(), 16);
    assert!((h.huang_rhys() - 16.0 * 0.16).abs() < 1e-12);
    let w = h.frequencies();
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &x| (a.0.min(x), a.1.max(x)));
    assert!((lo - 0.9).abs() < 1e-12 && (hi - 1.1).abs() < 1e-12);
    // Mirror pairs q and -q share a frequency.
    for (i, j) in Holstein::mirror(16).into_iter().enumerate() {
        assert_eq!(w[i], w[j]);
    }
}

#[test]
fn spectral_density_discretization_approaches_huang_rhys() {
    let band = |sites| HolsteinParams {
        sites,
        hopping: -0.5,
        omega0: 1.0,
        bandwidth: 0.8,
        coupling: HolsteinCoupling::Spectral { huang_rhys: 0.3 },
        start: ExcitonStart::Site0,
    };
    let coarse = (Holstein::new(&band(20)).unwrap().huang_rhys() - 0.3).abs();
    let fine = (Holstein::new(&band(400)).unwrap().huang_rhys() - 0.3).abs();
    assert!(fine < coarse && fine < 1e-3, "{coarse:e} {fine:e}");
    assert_eq!(holstein_spectral_density(0.3, 1.0, 0.8, 1.81), 0.0);
    assert!(holstein_spectral_density(0.3, 1.0, 0.8, 1.0) > 0.0);
    assert!(discretize_holstein_sd(0.3, 1.0, 0.8, &[1.9]).is_err());
}

#[test]
fn invalid_models_are_rejected() {
    assert!(SpinBoson::new(0.1, vec![1.0, -1.0], vec![0.1, 0.1]).is_err());
    assert!(SpinBoson::new(0.1, vec![1.0], vec![0.1, 0.1]).is_err());
    assert!(discretize_subohmic(-0.1, 0.25, 1.0, 10, DensityConvention::Pi).is_err());
    let odd = HolsteinParams {
        sites: 7,
        hopping: 0.1,
        omega0: 1.0,
        bandwidth: 0.1,
        coupling: HolsteinCoupling::Constant { g: 0.1 },
        start: ExcitonStart::Site0,
    };
    assert!(Holstein::new(&odd).is_err());
}
