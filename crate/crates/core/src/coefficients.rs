//! Coefficient data `(Q, α, β, γ, δ)` with the declared constants `η` and
//! `κ_Q`, pointwise hypothesis checks, and the principal-symbol check of the
//! fourth-order family `λ + B(αB)`.
//!
//! Interior fields (`Q`, `α`) are sampled at the element quadrature points;
//! boundary fields (`β`, `γ`, `δ`) at the boundary nodes. A per-cell table
//! therefore has one entry per element for interior fields and one entry per
//! boundary node for boundary fields.

use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::mesh::Mesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarField {
    Constant(f64),
    Expression(Expr),
    PerCell {
        per_cell: Vec<f64>,
    },
}

impl ScalarField {
    pub fn expr(source: &str) -> Result<Self> {
        Ok(ScalarField::Expression(Expr::parse(source)?))
    }

    /// Value at `x`; `index` selects the table entry for per-cell data.
    pub fn eval(&self, x: &[f64], index: usize) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Expression(e) => e.eval(x),
            ScalarField::PerCell { per_cell } => per_cell[index],
        }
    }

    fn check_len(&self, expected: usize, what: &'static str) -> Result<()> {
        match self {
            ScalarField::PerCell { per_cell } if per_cell.len() != expected => {
                Err(Error::shape(what, expected, per_cell.len()))
            }
            _ => Ok(()),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(c) => Some(*c),
            _ => None,
        }
    }
}

impl From<f64> for ScalarField {
    fn from(c: f64) -> Self {
        ScalarField::Constant(c)
    }
}

/// Symmetric matrix field `Q`. Either a scalar multiple of the identity or a
/// full `d x d` table of scalar fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixField {
    Isotropic(ScalarField),
    Full(Vec<Vec<ScalarField>>),
}

impl MatrixField {
    pub fn identity() -> Self {
        MatrixField::Isotropic(ScalarField::Constant(1.0))
    }

    pub fn constant(rows: &[&[f64]]) -> Self {
        MatrixField::Full(
            rows.iter()
                .map(|r| r.iter().map(|&v| ScalarField::Constant(v)).collect())
                .collect(),
        )
    }

    /// `Q(x)` embedded in a 2 x 2 matrix; for `d = 1` only entry (0,0) is set.
    pub fn eval(&self, x: &[f64], cell: usize, dim: usize) -> Matrix2<f64> {
        let mut q = Matrix2::zeros();
        match self {
            MatrixField::Isotropic(s) => {
                let v = s.eval(x, cell);
                for i in 0..dim {
                    q[(i, i)] = v;
                }
            }
            MatrixField::Full(rows) => {
                for i in 0..dim {
                    for j in 0..dim {
                        q[(i, j)] = rows[i][j].eval(x, cell);
                    }
                }
            }
        }
        q
    }

    /// True when `Q = I` identically.
    pub fn is_identity(&self, dim: usize) -> bool {
        match self {
            MatrixField::Isotropic(s) => s.as_constant() == Some(1.0),
            MatrixField::Full(rows) => (0..dim).all(|i| {
                (0..dim).all(|j| {
                    rows[i][j].as_constant() == Some(if i == j { 1.0 } else { 0.0 })
                })
            }),
        }
    }

    fn check_shape(&self, dim: usize, cells: usize) -> Result<()> {
        match self {
            MatrixField::Isotropic(s) => s.check_len(cells, "Q per-cell table"),
            MatrixField::Full(rows) => {
                if rows.len() != dim {
                    return Err(Error::shape("Q rows", dim, rows.len()));
                }
                for r in rows {
                    if r.len() != dim {
                        return Err(Error::shape("Q columns", dim, r.len()));
                    }
                    for e in r {
                        e.check_len(cells, "Q per-cell table")?;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Omitted fields take their [`Default`] values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientSet {
    pub q: MatrixField,
    pub alpha: ScalarField,
    pub beta: ScalarField,
    pub gamma: ScalarField,
    pub delta: ScalarField,
    /// Declared lower bound for `α` and `β`.
    pub eta: f64,
    /// Declared ellipticity constant of `Q`.
    pub kappa_q: f64,
}

impl Default for CoefficientSet {
    /// `Q = I`, `α = β = 1`, `γ = δ = 0`, `η = κ_Q = 1/2`.
    fn default() -> Self {
        CoefficientSet {
            q: MatrixField::identity(),
            alpha: 1.0.into(),
            beta: 1.0.into(),
            gamma: 0.0.into(),
            delta: 0.0.into(),
            eta: 0.5,
            kappa_q: 0.5,
        }
    }
}

impl CoefficientSet {
    pub fn with_gamma(mut self, gamma: impl Into<ScalarField>) -> Self {
        self.gamma = gamma.into();
        self
    }

    pub fn with_delta(mut self, delta: impl Into<ScalarField>) -> Self {
        self.delta = delta.into();
        self
    }

    pub fn with_alpha(mut self, alpha: impl Into<ScalarField>) -> Self {
        self.alpha = alpha.into();
        self
    }

    pub fn with_beta(mut self, beta: impl Into<ScalarField>) -> Self {
        self.beta = beta.into();
        self
    }

    pub fn with_q(mut self, q: MatrixField) -> Self {
        self.q = q;
        self
    }

    /// Checks table sizes against the mesh.
    pub fn check_shapes(&self, mesh: &Mesh) -> Result<()> {
        let cells = mesh.elements.len();
        let nb = mesh.num_boundary_nodes();
        self.q.check_shape(mesh.dimension, cells)?;
        self.alpha.check_len(cells, "alpha per-cell table")?;
        self.beta.check_len(nb, "beta per-node table")?;
        self.gamma.check_len(nb, "gamma per-node table")?;
        self.delta.check_len(nb, "delta per-node table")?;
        Ok(())
    }

    /// `β, γ, δ` at each boundary node, in boundary order.
    pub fn boundary_values(&self, mesh: &Mesh) -> BoundaryValues {
        let mut bv = BoundaryValues::default();
        for (j, x) in mesh.boundary_points().enumerate() {
            bv.beta.push(self.beta.eval(x, j));
            bv.gamma.push(self.gamma.eval(x, j));
            bv.delta.push(self.delta.eval(x, j));
        }
        bv
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryValues {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    /// Worst sampled margin; nonnegative iff the check passes (symmetry reports
    /// the negated asymmetry).
    pub margin: f64,
    pub worst_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<HypothesisCheck>,
    pub samples_interior: usize,
    pub samples_boundary: usize,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// `Err(Hypothesis)` naming every failed check.
    pub fn require(&self) -> Result<()> {
        if self.passed {
            return Ok(());
        }
        let names: Vec<String> = self
            .failures()
            .map(|c| format!("{} (margin {:e})", c.name, c.margin))
            .collect();
        Err(Error::Hypothesis(names.join("; ")))
    }
}

const SYMMETRY_TOL: f64 = 1e-12;

struct Worst {
    margin: f64,
    point: Vec<f64>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            margin: f64::INFINITY,
            point: Vec::new(),
        }
    }

    fn update(&mut self, margin: f64, x: &[f64]) {
        // NaN counts as the worst possible value
        if margin.is_nan() || margin < self.margin {
            self.margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
            self.point = x.to_vec();
        }
    }
}

/// Interior sample points: every element quadrature point plus every node
/// (nodes are attributed to their first adjacent cell for table lookups).
fn interior_samples(mesh: &Mesh) -> Vec<(Vec<f64>, usize)> {
    let mut out = Vec::new();
    for cell in 0..mesh.elements.len() {
        for qp in mesh.quadrature(cell) {
            out.push((qp.x, cell));
        }
    }
    let mut owner = vec![usize::MAX; mesh.num_nodes()];
    for (cell, el) in mesh.elements.iter().enumerate() {
        for &i in el {
            if owner[i] == usize::MAX {
                owner[i] = cell;
            }
        }
    }
    for (i, x) in mesh.nodes.iter().enumerate() {
        out.push((x.clone(), owner[i]));
    }
    out
}

/// Checks the pointwise hypotheses on all samples. Never fails on a violated
/// hypothesis: the report flags it and callers refuse assembly via
/// [`ValidationReport::require`].
pub fn validate_coefficients(mesh: &Mesh, coeffs: &CoefficientSet) -> Result<ValidationReport> {
    coeffs.check_shapes(mesh)?;
    let dim = mesh.dimension;
    let samples = interior_samples(mesh);

    let mut asym = Worst::new();
    let mut pd = Worst::new();
    let mut alpha = Worst::new();
    for (x, cell) in &samples {
        let q = coeffs.q.eval(x, *cell, dim);
        let scale = q.abs().max().max(1.0);
        let a = (q - q.transpose()).abs().max();
        asym.update(SYMMETRY_TOL * scale - a, x);
        pd.update(min_eigenvalue(&q, dim) - coeffs.kappa_q, x);
        alpha.update(coeffs.alpha.eval(x, *cell) - coeffs.eta, x);
    }

    let mut beta = Worst::new();
    let mut delta = Worst::new();
    let mut gamma_finite = Worst::new();
    for (j, x) in mesh.boundary_points().enumerate() {
        beta.update(coeffs.beta.eval(x, j) - coeffs.eta, x);
        delta.update(coeffs.delta.eval(x, j), x);
        let g = coeffs.gamma.eval(x, j);
        gamma_finite.update(if g.is_finite() { 0.0 } else { -1.0 }, x);
    }

    let mk = |name: &str, w: Worst| HypothesisCheck {
        name: name.to_string(),
        passed: w.margin >= 0.0,
        margin: w.margin,
        worst_point: w.point,
    };
    let constant = |name: &str, v: f64| HypothesisCheck {
        name: name.to_string(),
        passed: v > 0.0 && v.is_finite(),
        margin: v,
        worst_point: Vec::new(),
    };

    let checks = vec![
        constant("eta > 0", coeffs.eta),
        constant("kappa_Q > 0", coeffs.kappa_q),
        mk("Q symmetric", asym),
        mk("Q uniformly positive definite (min eig Q >= kappa_Q)", pd),
        mk("alpha >= eta on the domain", alpha),
        mk("beta >= eta on the boundary", beta),
        mk("gamma bounded on the boundary", gamma_finite),
        mk("delta >= 0 on the boundary", delta),
    ];
    Ok(ValidationReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        samples_interior: samples.len(),
        samples_boundary: mesh.num_boundary_nodes(),
    })
}

fn min_eigenvalue(q: &Matrix2<f64>, dim: usize) -> f64 {
    if dim == 1 {
        return q[(0, 0)];
    }
    let sym = (q + q.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// `a₀(x, ξ) = (ξᵀQξ) α (ξᵀQξ)`.
pub fn principal_symbol(q: &Matrix2<f64>, alpha: f64, xi: &[f64]) -> f64 {
    let mut form = 0.0;
    for (i, xi_i) in xi.iter().enumerate() {
        for (j, xi_j) in xi.iter().enumerate() {
            form += xi_i * q[(i, j)] * xi_j;
        }
    }
    form * alpha * form
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolReport {
    pub sector_angle: f64,
    pub min_symbol: f64,
    pub max_symbol: f64,
    /// Sampled lower bound of `|λ + a₀(x,ξ)| / (|λ| + |ξ|⁴)` over the sector
    /// boundary `|arg λ| = θ` and the unit sphere.
    pub lower_bound: f64,
    /// Largest relative deviation of `a₀(x, sξ)` from `s⁴ a₀(x, ξ)`.
    pub homogeneity_error: f64,
    pub samples: usize,
}

/// Samples `a₀` over interior points and `samples` unit directions `ξ`, and
/// the resolvent bound over `λ = r e^{±iθ}` on a geometric grid of radii.
pub fn check_principal_symbol(
    coeffs: &CoefficientSet,
    mesh: &Mesh,
    sector_angle: f64,
    samples: usize,
) -> Result<SymbolReport> {
    if !(sector_angle > 0.0 && sector_angle < std::f64::consts::PI) {
        return Err(Error::Precondition(format!(
            "sector angle must lie in (0, pi), got {sector_angle}"
        )));
    }
    coeffs.check_shapes(mesh)?;
    let dim = mesh.dimension;
    let directions: Vec<Vec<f64>> = if dim == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        let m = samples.max(1);
        (0..m)
            .map(|k| {
                let phi = std::f64::consts::PI * k as f64 / m as f64;
                vec![phi.cos(), phi.sin()]
            })
            .collect()
    };
    let radii: Vec<f64> = (-40..=40).map(|k| 10f64.powf(k as f64 / 10.0)).collect();
    let cos_t = sector_angle.cos();

    let mut min_sym = f64::INFINITY;
    let mut max_sym = f64::NEG_INFINITY;
    let mut bound = f64::INFINITY;
    let mut homog: f64 = 0.0;
    let mut count = 0;
    for (x, cell) in interior_samples(mesh) {
        let q = coeffs.q.eval(&x, cell, dim);
        let alpha = coeffs.alpha.eval(&x, cell);
        for xi in &directions {
            let a0 = principal_symbol(&q, alpha, xi);
            count += 1;
            if !(a0 > 0.0) {
                return Err(Error::NotElliptic {
                    value: a0,
                    point: x.clone(),
                });
            }
            min_sym = min_sym.min(a0);
            max_sym = max_sym.max(a0);
            for s in [0.5, 2.0, 3.7] {
                let scaled: Vec<f64> = xi.iter().map(|v| v * s).collect();
                let rel = (principal_symbol(&q, alpha, &scaled) - s.powi(4) * a0).abs()
                    / (s.powi(4) * a0);
                homog = homog.max(rel);
            }
            // |r e^{iθ} + a|² = r² + a² + 2 r a cos θ; |ξ| = 1
            let ratio = |r: f64| (r * r + a0 * a0 + 2.0 * r * a0 * cos_t).sqrt() / (r + 1.0);
            bound = bound.min(ratio(0.0));
            for &r in radii.iter().chain(std::iter::once(&a0)) {
                bound = bound.min(ratio(r));
            }
        }
    }
    Ok(SymbolReport {
        sector_angle,
        min_symbol: min_sym,
        max_symbol: max_sym,
        lower_bound: bound,
        homogeneity_error: homog,
        samples: count,
    })
}
