//! Generalized symmetric eigenproblems `A x = λ M_H x` and the transcendental
//! eigenvalue oracle for constant coefficients on an interval.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix4};
use serde::Serialize;

use crate::dense::{solve_lower, solve_lower_transpose};
use crate::error::{Error, Result};
use crate::wentzell::WentzellSystem;

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns are `M_H`-orthonormal coupled coordinates.
    pub eigenvectors: DMatrix<f64>,
    /// `‖A e - λ M_H e‖ / (‖A‖_F ‖e‖)`.
    pub residuals: Vec<f64>,
    pub m_h: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.m_h.nrows()
    }

    /// Whether the basis spans the whole discrete space.
    pub fn is_complete(&self) -> bool {
        self.len() == self.dim()
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// Coefficients `e_kᵀ M_H f` for every stored mode.
    pub fn coefficients(&self, f: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.transpose() * (&self.m_h * f)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Smallest `count` eigenpairs of `(A, M_H)`.
///
/// The assembly stores a factor `G` with `GᵀG = A + s M_H`. With
/// `F = G L_H⁻ᵀ` the eigenvalues are `σ(F)² - s` and the eigenvectors
/// `L_H⁻ᵀ v`. Working with `F` instead of `L_H⁻¹ A L_H⁻ᵀ` squares the
/// relative accuracy of the small eigenvalues, which sit some 14 orders of
/// magnitude below `‖A‖` at `n = 1024`.
pub fn eig_generalized(sys: &WentzellSystem, count: usize) -> Result<EigenDecomposition> {
    let n = sys.dim();
    check_count(count, n)?;
    let l = sys.mass.cholesky_l();
    let f = solve_lower(l, &sys.factor.transpose()).transpose();
    let fm = faer::Mat::<f64>::from_fn(f.nrows(), n, |i, j| f[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|_| Error::Assembly("SVD did not converge".into()))?;
    let sv = svd.S().column_vector();
    let vm = svd.V();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    order.truncate(count);

    let mut v = DMatrix::zeros(n, count);
    let mut values = Vec::with_capacity(count);
    for (c, &i) in order.iter().enumerate() {
        values.push(sv[i] * sv[i] - sys.shift);
        for r in 0..n {
            v[(r, c)] = vm[(r, i)];
        }
    }
    let vectors = solve_lower_transpose(l, &v);
    finish(&sys.a, &sys.mass.m_h, values, vectors)
}

/// Plain route for arbitrary symmetric `A`: Cholesky reduction of `M_H` and a
/// symmetric eigensolve of `L⁻¹ A L⁻ᵀ`.
pub fn eig_generalized_dense(
    a: &DMatrix<f64>,
    m_h: &DMatrix<f64>,
    count: usize,
) -> Result<EigenDecomposition> {
    let n = m_h.nrows();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::shape("operator", n, a.nrows()));
    }
    check_count(count, n)?;
    let l = Cholesky::new(m_h.clone())
        .ok_or(Error::NotSpd("product mass M_H"))?
        .l();
    let x = solve_lower(&l, a);
    let mut red = solve_lower(&l, &x.transpose());
    crate::wentzell::mirror_lower(&mut red);
    let eig = red.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    order.truncate(count);
    let mut v = DMatrix::zeros(n, count);
    let mut values = Vec::with_capacity(count);
    for (c, &i) in order.iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        v.set_column(c, &eig.eigenvectors.column(i));
    }
    let vectors = solve_lower_transpose(&l, &v);
    finish(a, m_h, values, vectors)
}

fn check_count(count: usize, n: usize) -> Result<()> {
    if count == 0 || count > n {
        return Err(Error::Precondition(format!(
            "eigenpair count must be in 1..={n}, got {count}"
        )));
    }
    Ok(())
}

/// Fixes signs (largest entry positive) and computes residuals.
fn finish(
    a: &DMatrix<f64>,
    m_h: &DMatrix<f64>,
    values: Vec<f64>,
    mut vectors: DMatrix<f64>,
) -> Result<EigenDecomposition> {
    let a_norm = a.norm().max(f64::MIN_POSITIVE);
    let av = a * &vectors;
    let mv = m_h * &vectors;
    let mut residuals = Vec::with_capacity(values.len());
    for (k, &lambda) in values.iter().enumerate() {
        let mut col = vectors.column_mut(k);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        let r = (av.column(k) - mv.column(k) * lambda).norm();
        residuals.push(r / (a_norm * vectors.column(k).norm()));
    }
    Ok(EigenDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
        residuals,
        m_h: m_h.clone(),
    })
}

/// Number of eigenvalues with `|λ| ≤ tol·max(1, λ_last)`.
pub fn kernel_dimension(decomp: &EigenDecomposition, tol: f64) -> usize {
    let last = decomp.eigenvalues.last().copied().unwrap_or(0.0);
    let bound = tol * last.abs().max(1.0);
    decomp.eigenvalues.iter().filter(|l| l.abs() <= bound).count()
}

/// Output of [`oracle_eigenvalues_interval`].
#[derive(Debug, Clone, Serialize)]
pub struct OracleSpectrum {
    /// Ascending roots; at most the requested count.
    pub eigenvalues: Vec<f64>,
    /// `false` when fewer roots than requested were found below the scan
    /// ceiling.
    pub complete: bool,
    pub scan_ceiling: f64,
}

/// Constant-coefficient interval problem: `q, α = a, β = b, γ = g, δ = d` on
/// `(0, length)`.
#[derive(Debug, Clone, Copy)]
struct IntervalProblem {
    q: f64,
    a: f64,
    b: f64,
    g: f64,
    d: f64,
    len: f64,
}

const SCAN_FLOOR: f64 = 1e-6;
const SCAN_CEILING: f64 = 1e8;
const POINTS_PER_DECADE: f64 = 64.0;

impl IntervalProblem {
    /// `μ = λ / (q² a)`, so the interior equation reads `u'''' = μ u`.
    fn mu(&self, lambda: f64) -> f64 {
        lambda / (self.q * self.q * self.a)
    }

    /// Values and first three derivatives of the four basis functions at `x`.
    /// `out[j][m]` is the `m`-th derivative of function `j`.
    fn basis(&self, lambda: f64, x: f64, exponential: bool) -> [[f64; 4]; 4] {
        let mu = self.mu(lambda);
        if exponential {
            let w = mu.powf(0.25);
            let e1 = (w * (x - self.len)).exp();
            let e2 = (-w * x).exp();
            let (s, c) = (w * x).sin_cos();
            let mut out = [[0.0; 4]; 4];
            let mut p = 1.0;
            for m in 0..4 {
                out[0][m] = p * e1;
                out[1][m] = p * e2 * if m % 2 == 0 { 1.0 } else { -1.0 };
                out[2][m] = p * [c, -s, -c, s][m];
                out[3][m] = p * [s, c, -s, -c][m];
                p *= w;
            }
            out
        } else {
            // S_r(x) = Σ μ^m x^{4m+r} / (4m+r)!, with S_r' = S_{r-1}, S_0' = μ S_3
            let s = krylov(mu, x);
            let mut out = [[0.0; 4]; 4];
            for (r, row) in out.iter_mut().enumerate() {
                for (m, v) in row.iter_mut().enumerate() {
                    *v = if m <= r { s[r - m] } else { mu * s[4 + r - m] };
                }
            }
            out
        }
    }

    /// Rows: Robin condition at 0 and L, then the dynamic condition at 0 and L.
    fn matrix(&self, lambda: f64, exponential: bool) -> Matrix4<f64> {
        let IntervalProblem { q, a, b, g, d, len } = *self;
        let left = self.basis(lambda, 0.0, exponential);
        let right = self.basis(lambda, len, exponential);
        let mut m = Matrix4::zeros();
        for j in 0..4 {
            let (l, r) = (left[j], right[j]);
            m[(0, j)] = -q * l[1] + d * l[0];
            m[(1, j)] = q * r[1] + d * r[0];
            m[(2, j)] = b * a * q * q * l[3] - b * d * a * q * l[2] + (g - lambda) * l[0];
            m[(3, j)] = -b * a * q * q * r[3] - b * d * a * q * r[2] + (g - lambda) * r[0];
        }
        for mut row in m.row_iter_mut() {
            let s = row.amax();
            if s > 0.0 {
                row /= s;
            }
        }
        m
    }

    /// `ωL` above which the exponential basis replaces the series.
    const SWITCH: f64 = 1.0;

    fn switch_lambda(&self) -> f64 {
        (Self::SWITCH / self.len).powi(4) * self.q * self.q * self.a
    }

    /// Determinant as a continuous function of `λ`: the series basis below
    /// the switch, the exponential basis above it with the sign of the
    /// change of basis folded in.
    fn det_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        let ls = self.switch_lambda();
        let ds = self.matrix(ls, false).determinant();
        let de = self.matrix(ls, true).determinant();
        let flip = if ds * de < 0.0 { -1.0 } else { 1.0 };
        move |lambda| {
            if lambda <= ls {
                self.matrix(lambda, false).determinant()
            } else {
                flip * self.matrix(lambda, true).determinant()
            }
        }
    }
}

fn krylov(mu: f64, x: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    let x4 = mu * x.powi(4);
    for (r, o) in out.iter_mut().enumerate() {
        // first term x^r / r!
        let mut term = x.powi(r as i32) / [1.0, 1.0, 2.0, 6.0][r];
        let mut sum = term;
        for m in 1..400 {
            let k = (4 * m + r) as f64;
            term *= x4 / (k * (k - 1.0) * (k - 2.0) * (k - 3.0));
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        *o = sum;
    }
    out
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= 1e-12 * mid.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of the 4×4 boundary determinant of the constant-coefficient
/// Wentzell eigenproblem on `(0, length)`.
///
/// The interior equation is `q² a u'''' = λ u`. With outward normal `ν = ∓1`
/// at the two endpoints, the rows are
///
/// ```text
///   -q u'(0) + d u(0) = 0,            q u'(L) + d u(L) = 0,
///    b a q² u'''(0) - b d a q u''(0) + (g - λ) u(0) = 0,
///   -b a q² u'''(L) - b d a q u''(L) + (g - λ) u(L) = 0.
/// ```
///
/// Roots are bracketed on a geometric grid over `[1e-6, 1e8]` (64 points per
/// decade), on a uniform grid over `[g, 0)` when `g < 0` (the lowest
/// eigenvalue lies there), and at `λ = 0` exactly, then bisected to `1e-10`
/// relative or better.
pub fn oracle_eigenvalues_interval(
    q: f64,
    a: f64,
    b: f64,
    g: f64,
    d: f64,
    length: f64,
    count: usize,
) -> Result<OracleSpectrum> {
    if !(q > 0.0 && a > 0.0 && b > 0.0 && length > 0.0) {
        return Err(Error::Precondition("q, a, b and length must be positive".into()));
    }
    if !(d >= 0.0) || !g.is_finite() {
        return Err(Error::Precondition("d must be >= 0 and g finite".into()));
    }
    if count == 0 {
        return Err(Error::Precondition("count must be >= 1".into()));
    }
    let p = IntervalProblem { q, a, b, g, d, len: length };
    let det = p.det_fn();

    let mut grid = Vec::new();
    if g < 0.0 {
        let steps = 512;
        for i in 0..steps {
            grid.push(g * (1.0 + 1e-9) * (1.0 - i as f64 / steps as f64));
        }
    }
    let zero_is_root = {
        let d0 = det(0.0);
        d0.abs() <= 1e-12
    };
    grid.push(0.0);
    let decades = (SCAN_CEILING / SCAN_FLOOR).log10();
    let points = (decades * POINTS_PER_DECADE).round() as usize;
    for i in 0..=points {
        grid.push(SCAN_FLOOR * 10f64.powf(i as f64 / POINTS_PER_DECADE));
    }

    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for &lambda in &grid {
        let v = if lambda == 0.0 && zero_is_root { 0.0 } else { det(lambda) };
        if lambda == 0.0 && zero_is_root {
            roots.push(0.0);
            prev = None;
            continue;
        }
        if let Some((l0, v0)) = prev {
            if v == 0.0 {
                roots.push(lambda);
                prev = None;
                continue;
            }
            if (v0 < 0.0) != (v < 0.0) {
                roots.push(bisect(&det, l0, lambda, v0));
            }
        }
        prev = Some((lambda, v));
        if roots.len() >= count {
            break;
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.truncate(count);
    Ok(OracleSpectrum {
        complete: roots.len() >= count,
        eigenvalues: roots,
        scan_ceiling: SCAN_CEILING,
    })
}
