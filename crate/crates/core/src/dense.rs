//! Blocked dense kernels. nalgebra's triangular solves with many right-hand
//! sides run column by column; splitting the triangle recursively moves the
//! bulk of the work into matrix products.

use nalgebra::DMatrix;

const BLOCK: usize = 96;

/// `X` with `L X = B`, `L` lower triangular with nonzero diagonal.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    assert_eq!(b.nrows(), n);
    if n <= BLOCK {
        return l
            .solve_lower_triangular(b)
            .expect("triangular factor has nonzero diagonal");
    }
    let h = n / 2;
    let l11 = l.view((0, 0), (h, h)).into_owned();
    let l21 = l.view((h, 0), (n - h, h));
    let l22 = l.view((h, h), (n - h, n - h)).into_owned();
    let x1 = solve_lower(&l11, &b.rows(0, h).into_owned());
    let rhs2 = b.rows(h, n - h) - l21 * &x1;
    let x2 = solve_lower(&l22, &rhs2);
    let mut x = DMatrix::zeros(n, b.ncols());
    x.rows_mut(0, h).copy_from(&x1);
    x.rows_mut(h, n - h).copy_from(&x2);
    x
}

/// `X` with `Lᵀ X = B`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    assert_eq!(b.nrows(), n);
    if n <= BLOCK {
        return l
            .tr_solve_lower_triangular(b)
            .expect("triangular factor has nonzero diagonal");
    }
    // Lᵀ = [L11ᵀ L21ᵀ; 0 L22ᵀ]
    let h = n / 2;
    let l11 = l.view((0, 0), (h, h)).into_owned();
    let l21t = l.view((h, 0), (n - h, h)).transpose();
    let l22 = l.view((h, h), (n - h, n - h)).into_owned();
    let x2 = solve_lower_transpose(&l22, &b.rows(h, n - h).into_owned());
    let rhs1 = b.rows(0, h) - l21t * &x2;
    let x1 = solve_lower_transpose(&l11, &rhs1);
    let mut x = DMatrix::zeros(n, b.ncols());
    x.rows_mut(0, h).copy_from(&x1);
    x.rows_mut(h, n - h).copy_from(&x2);
    x
}

/// `(L Lᵀ)⁻¹ B`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// `Aᵀ B` through an explicit transpose, which is far faster than
/// nalgebra's dot-product based `tr_mul` at these sizes.
pub fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}
