//! Thin wrappers over faer's sparse storage for the banded FE matrices, so
//! that products and mass solves stay local to each stencil.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::matmul::sparse_dense_matmul;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Accum, MatMut, MatRef, Par, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Sparse {
    mat: SparseColMat<usize, f64>,
}

impl Sparse {
    /// Keeps the exactly nonzero entries of `m`.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push(Triplet::new(i, j, v));
                }
            }
        }
        let mat = SparseColMat::try_new_from_triplets(m.nrows(), m.ncols(), &entries)
            .expect("indices are in range and unique");
        Self { mat }
    }

    pub fn nnz(&self) -> usize {
        self.mat.compute_nnz()
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.mat.nrows());
        sparse_dense_matmul(
            MatMut::from_column_major_slice_mut(out.as_mut_slice(), self.mat.nrows(), 1),
            Accum::Replace,
            self.mat.as_ref(),
            MatRef::from_column_major_slice(x.as_slice(), x.len(), 1),
            1.0,
            Par::Seq,
        );
        out
    }
}

/// Sparse `L Lᵀ` factorization of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    llt: Llt<usize, f64>,
    n: usize,
}

impl SparseCholesky {
    pub fn new(m: &Sparse, what: &'static str) -> Result<Self> {
        let llt = m.mat.sp_cholesky(Side::Lower).map_err(|_| Error::NotSpd(what))?;
        Ok(Self { llt, n: m.mat.nrows() })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.llt
            .solve_in_place(MatMut::from_column_major_slice_mut(x.as_mut_slice(), self.n, 1));
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense() {
        let n = 40;
        let m = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 4.0 + i as f64 * 0.1,
            1 => -1.0,
            _ => 0.0,
        });
        let s = Sparse::from_dense(&m);
        assert_eq!(s.nnz(), 3 * n - 2);
        let x = DVector::from_fn(n, |i, _| (i as f64).sin());
        assert!((s.mul(&x) - &m * &x).amax() < 1e-14);
        let ch = SparseCholesky::new(&s, "test").unwrap();
        let y = ch.solve(&x);
        assert!((&m * y - x).amax() < 1e-13);
    }
}
