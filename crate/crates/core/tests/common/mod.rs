#![allow(dead_code)]

use davydov::c64;
use davydov::ensemble::EnsembleState;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cplx(rng: &mut ChaCha8Rng, scale: f64) -> c64 {
    c64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<c64> {
    Array2::from_shape_fn((rows, cols), |_| cplx(rng, scale))
}

/// Random normalized state with well separated displacements.
pub fn random_state(rng: &mut ChaCha8Rng, ns: usize, m: usize, n: usize) -> EnsembleState {
    loop {
        let a = random_matrix(rng, ns, m, 1.0);
        let f = random_matrix(rng, m, n, 1.0);
        let mut st = EnsembleState::new(a, f, 0.0).unwrap();
        if st.closest_free_pair().is_some_and(|p| p.2 < 0.3) {
            continue;
        }
        let norm = st.norm_squared().sqrt();
        st.coefficients.mapv_inplace(|z| z / norm);
        return st;
    }
}

pub fn max_diff(a: &Array2<c64>, b: &Array2<c64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_norm(a: &Array2<c64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub mod bargmann;
pub mod naive;

use davydov::models::{ExcitonStart, HarmonicBath, Holstein, ModelSpec, SpinBoson};

/// Random model with `n` modes: spin-boson, Holstein (even `n`) or a driven
/// harmonic bath, chosen by `kind % 3`.
pub fn random_model(rng: &mut ChaCha8Rng, kind: usize, n: usize) -> ModelSpec {
    let omega: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
    let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(-0.8..0.8)).collect();
    match kind % 3 {
        0 => ModelSpec::SpinBoson(SpinBoson::new(rng.random_range(-1.0..1.0), omega, lambda).unwrap()),
        1 if n % 2 == 0 => {
            let q = (0..n)
                .map(|i| 2.0 * std::f64::consts::PI * Holstein::label(n, i) as f64 / n as f64)
                .collect();
            ModelSpec::Holstein(
                Holstein::from_tables(rng.random_range(-0.5..0.5), omega, lambda, q, ExcitonStart::Site0).unwrap(),
            )
        }
        _ => {
            let mut b = HarmonicBath::new(omega);
            b.offset = rng.random_range(-1.0..1.0);
            b.drive = lambda;
            ModelSpec::Harmonic(b)
        }
    }
}
