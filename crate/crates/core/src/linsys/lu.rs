//! Thin LAPACK layer: LU with partial pivoting plus a 1-norm condition
//! estimate, and the Hermitian eigensolver.

use lax::layout::MatrixLayout;
use lax::{Lapack, Pivot, Transpose, UPLO};
use ndarray::{Array1, Array2};

use crate::c64;
use crate::error::{Error, Result};

/// LU factors of a square complex matrix.
pub struct LuFactors {
    n: usize,
    /// Column-major factors.
    data: Vec<c64>,
    pivots: Pivot,
    rcond: f64,
}

/// Why a factorization failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LuFailure {
    /// Exact zero pivot.
    ZeroPivot,
    /// Non-finite entries in the input.
    NonFinite,
}

impl LuFactors {
    /// Factorizes `a`; also estimates the reciprocal condition number.
    pub fn factorize(a: &Array2<c64>) -> std::result::Result<Self, LuFailure> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        if n == 0 {
            return Ok(LuFactors {
                n,
                data: Vec::new(),
                pivots: Vec::new(),
                rcond: 1.0,
            });
        }
        let mut data: Vec<c64> = a.t().iter().copied().collect();
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(LuFailure::NonFinite);
        }
        let norm1 = (0..n)
            .map(|j| data[j * n..(j + 1) * n].iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let layout = MatrixLayout::F {
            col: n as i32,
            lda: n as i32,
        };
        let pivots = c64::lu(layout, &mut data).map_err(|_| LuFailure::ZeroPivot)?;
        let rcond = c64::rcond(layout, &data, norm1).unwrap_or(0.0);
        Ok(LuFactors { n, data, pivots, rcond })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Reciprocal 1-norm condition estimate.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn solve_in_place(&self, b: &mut [c64]) {
        assert_eq!(b.len(), self.n);
        if self.n == 0 {
            return;
        }
        let layout = MatrixLayout::F {
            col: self.n as i32,
            lda: self.n as i32,
        };
        c64::solve(layout, Transpose::No, &self.data, &self.pivots, b).expect("getrs on valid factors");
    }

    pub fn solve(&self, b: &Array1<c64>) -> Array1<c64> {
        let mut v = b.to_vec();
        self.solve_in_place(&mut v);
        Array1::from(v)
    }

    /// Solves for every column of `b`.
    pub fn solve_columns(&self, b: &Array2<c64>) -> Array2<c64> {
        let mut out = Array2::zeros(b.raw_dim());
        let mut col = vec![c64::new(0.0, 0.0); self.n];
        for j in 0..b.ncols() {
            for (c, v) in col.iter_mut().zip(b.column(j).iter()) {
                *c = *v;
            }
            self.solve_in_place(&mut col);
            for (o, c) in out.column_mut(j).iter_mut().zip(col.iter()) {
                *o = *c;
            }
        }
        out
    }

    pub fn inverse(&self) -> Array2<c64> {
        self.solve_columns(&Array2::eye(self.n))
    }
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and
/// eigenvectors as columns.
pub fn eigh(a: &Array2<c64>) -> Result<(Array1<f64>, Array2<c64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension {
            what: "eigh",
            expected: n,
            actual: a.ncols(),
        });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let mut data: Vec<c64> = a.t().iter().copied().collect();
    let layout = MatrixLayout::F {
        col: n as i32,
        lda: n as i32,
    };
    let w = c64::eigh(true, layout, UPLO::Upper, &mut data).map_err(|e| Error::Lapack(e.to_string()))?;
    let vecs = Array2::from_shape_vec((n, n), data)
        .map_err(|e| Error::Lapack(e.to_string()))?
        .reversed_axes();
    Ok((Array1::from(w), vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_system() {
        let a = array![
            [c64::new(2.0, 0.0), c64::new(1.0, 1.0)],
            [c64::new(0.0, -1.0), c64::new(3.0, 0.5)]
        ];
        let x = array![c64::new(1.0, -2.0), c64::new(0.5, 0.25)];
        let b = a.dot(&x);
        let lu = LuFactors::factorize(&a).unwrap();
        let got = lu.solve(&b);
        for (g, e) in got.iter().zip(x.iter()) {
            assert!((g - e).norm() < 1e-14);
        }
        assert!(lu.rcond() > 0.1);
    }

    #[test]
    fn zero_pivot_detected() {
        let a = Array2::<c64>::zeros((3, 3));
        assert_eq!(LuFactors::factorize(&a).err(), Some(LuFailure::ZeroPivot));
    }

    #[test]
    fn eigh_reconstructs() {
        let a = array![
            [c64::new(2.0, 0.0), c64::new(1.0, 1.0)],
            [c64::new(1.0, -1.0), c64::new(3.0, 0.0)]
        ];
        let (w, v) = eigh(&a).unwrap();
        let d = Array2::from_diag(&w.mapv(|x| c64::new(x, 0.0)));
        let back = v.dot(&d).dot(&v.t().mapv(|z| z.conj()));
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).norm() < 1e-13);
        }
    }
}
