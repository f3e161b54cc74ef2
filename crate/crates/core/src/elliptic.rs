//! The second-order subsidiary form `b_δ(u,v) = ⟨Q∇u,∇v⟩_Ω + ⟨δu,v⟩_Γ`:
//! mass, stiffness and boundary-mass assembly, the discrete Neumann/Robin
//! realization `B_h = M⁻¹(K + M_Γδ)`, weak co-normal traces, and the
//! inhomogeneous Neumann/Robin solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, ScalarField, ValidationReport};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTrace, Mesh};

/// Above this many cells the default mass mode switches to lumped.
pub const CONSISTENT_MASS_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassMode {
    Lumped,
    Consistent,
}

impl MassMode {
    pub fn default_for(mesh: &Mesh) -> Self {
        if mesh.elements.len() <= CONSISTENT_MASS_LIMIT {
            MassMode::Consistent
        } else {
            MassMode::Lumped
        }
    }
}

/// Coefficients that passed [`crate::coefficients::validate_coefficients`]
/// on a particular mesh. Assembly routines that read `Q` or `α` only accept
/// this type.
#[derive(Debug, Clone)]
pub struct Validated {
    coeffs: CoefficientSet,
    report: ValidationReport,
    nodes: usize,
    cells: usize,
}

impl Validated {
    pub fn new(mesh: &Mesh, coeffs: CoefficientSet) -> Result<Self> {
        let report = crate::coefficients::validate_coefficients(mesh, &coeffs)?;
        report.require()?;
        Ok(Validated {
            coeffs,
            report,
            nodes: mesh.num_nodes(),
            cells: mesh.elements.len(),
        })
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if mesh.num_nodes() != self.nodes || mesh.elements.len() != self.cells {
            return Err(Error::Assembly(
                "coefficients were validated on a different mesh".into(),
            ));
        }
        Ok(())
    }
}

/// Reference-element shape functions of the bilinear quad, node order
/// (-1,-1), (1,-1), (1,1), (-1,1).
const QUAD_CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

fn quad_shape(r: [f64; 2]) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (a, &(sa, ta)) in QUAD_CORNERS.iter().enumerate() {
        n[a] = 0.25 * (1.0 + sa * r[0]) * (1.0 + ta * r[1]);
    }
    n
}

fn quad_grad(r: [f64; 2], hx: f64, hy: f64) -> [[f64; 2]; 4] {
    let mut g = [[0.0; 2]; 4];
    for (a, &(sa, ta)) in QUAD_CORNERS.iter().enumerate() {
        g[a][0] = 0.25 * sa * (1.0 + ta * r[1]) * 2.0 / hx;
        g[a][1] = 0.25 * ta * (1.0 + sa * r[0]) * 2.0 / hy;
    }
    g
}

fn element_mass(mesh: &Mesh, cell: usize, weight: &ScalarField) -> DMatrix<f64> {
    let quad = mesh.quadrature(cell);
    match mesh.dimension {
        1 => {
            let qp = &quad[0];
            let h = mesh.element_volumes[cell];
            let rho = weight.eval(&qp.x, cell);
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) * (rho * h / 6.0)
        }
        _ => {
            let mut me = DMatrix::zeros(4, 4);
            for qp in &quad {
                let n = quad_shape(qp.reference);
                let rho = weight.eval(&qp.x, cell);
                for a in 0..4 {
                    for b in 0..4 {
                        me[(a, b)] += qp.weight * rho * n[a] * n[b];
                    }
                }
            }
            me
        }
    }
}

fn lump(m: DMatrix<f64>) -> DMatrix<f64> {
    let sums: Vec<f64> = m.row_iter().map(|r| r.sum()).collect();
    DMatrix::from_diagonal(&DVector::from_vec(sums))
}

/// Nodal mass matrix weighted by `weight` (`α` for `M_α`, `1` for `M_Ω`).
pub fn assemble_weighted_mass(mesh: &Mesh, weight: &ScalarField, mode: MassMode) -> DMatrix<f64> {
    let n = mesh.num_nodes();
    let mut m = DMatrix::zeros(n, n);
    for (cell, el) in mesh.elements.iter().enumerate() {
        let me = element_mass(mesh, cell, weight);
        for (a, &i) in el.iter().enumerate() {
            for (b, &j) in el.iter().enumerate() {
                m[(i, j)] += me[(a, b)];
            }
        }
    }
    match mode {
        MassMode::Consistent => m,
        MassMode::Lumped => lump(m),
    }
}

/// `M_Ω`: the discrete `L²(Ω)` inner product. The lumped variant is the
/// row-sum diagonal of the consistent matrix.
pub fn assemble_mass(mesh: &Mesh, mode: MassMode) -> DMatrix<f64> {
    assemble_weighted_mass(mesh, &ScalarField::Constant(1.0), mode)
}

/// `K_ij = ∫ (∇φ_j)ᵀ Q ∇φ_i`, with `Q` sampled at the element quadrature
/// points.
pub fn assemble_stiffness(mesh: &Mesh, coeffs: &Validated) -> Result<DMatrix<f64>> {
    coeffs.check_mesh(mesh)?;
    let qf = &coeffs.coefficients().q;
    let n = mesh.num_nodes();
    let mut k = DMatrix::zeros(n, n);
    for (cell, el) in mesh.elements.iter().enumerate() {
        let quad = mesh.quadrature(cell);
        let ke = match mesh.dimension {
            1 => {
                let qp = &quad[0];
                let h = mesh.element_volumes[cell];
                let q = qf.eval(&qp.x, cell, 1)[(0, 0)];
                DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]) * (q / h)
            }
            _ => {
                let (hx, hy) = (mesh.spacing[0], mesh.spacing[1]);
                let mut ke = DMatrix::zeros(4, 4);
                for qp in &quad {
                    let g = quad_grad(qp.reference, hx, hy);
                    let q = qf.eval(&qp.x, cell, 2);
                    // symmetric part only; asymmetry was rejected by validation
                    let q = (q + q.transpose()) * 0.5;
                    for a in 0..4 {
                        for b in 0..4 {
                            let mut s = 0.0;
                            for r in 0..2 {
                                for c in 0..2 {
                                    s += g[a][r] * q[(r, c)] * g[b][c];
                                }
                            }
                            ke[(a, b)] += qp.weight * s;
                        }
                    }
                }
                ke
            }
        };
        for (a, &i) in el.iter().enumerate() {
            for (b, &j) in el.iter().enumerate() {
                k[(i, j)] += ke[(a, b)];
            }
        }
    }
    // exact symmetry
    let kt = k.transpose();
    Ok((k + kt) * 0.5)
}

/// Diagonal boundary mass `Eᵀ diag(weight(x_j) w_j) E`.
pub fn assemble_boundary_mass(mesh: &Mesh, weight: &ScalarField) -> DMatrix<f64> {
    let n = mesh.num_nodes();
    let mut m = DMatrix::zeros(n, n);
    for (j, (&i, &w)) in mesh
        .boundary_nodes
        .iter()
        .zip(&mesh.boundary_weights)
        .enumerate()
    {
        m[(i, i)] += weight.eval(&mesh.nodes[i], j) * w;
    }
    m
}

/// The assembled subsidiary form and its realization
/// `B_h = M_Ω⁻¹ (K + M_Γδ)`.
#[derive(Debug, Clone)]
pub struct RealizedOperator {
    pub m_omega: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub m_gamma_delta: DMatrix<f64>,
    pub mode: MassMode,
    /// Smallest generalized eigenvalue of `(K + M_Γδ, M_Ω)`.
    pub semibound: f64,
    pub trace: BoundaryTrace,
    mass_factor: Cholesky<f64, Dyn>,
    mass_l: DMatrix<f64>,
}

/// Wraps assembled matrices into a realization. Fails if `M_Ω` is not SPD.
pub fn discrete_realization(
    m_omega: DMatrix<f64>,
    k: DMatrix<f64>,
    m_gamma_delta: DMatrix<f64>,
    mode: MassMode,
    trace: BoundaryTrace,
) -> Result<RealizedOperator> {
    let n = m_omega.nrows();
    for (what, m) in [("stiffness", &k), ("boundary mass", &m_gamma_delta)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::shape(what, n, m.nrows()));
        }
    }
    if trace.num_nodes != n {
        return Err(Error::shape("trace map", n, trace.num_nodes));
    }
    if mode == MassMode::Lumped && m_omega.diagonal().iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Assembly("singular lumped mass".into()));
    }
    let mass_factor = Cholesky::new(m_omega.clone())
        .ok_or_else(|| Error::Assembly("mass matrix is not positive definite".into()))?;
    let mass_l = mass_factor.l();
    let mut op = RealizedOperator {
        m_omega,
        k,
        m_gamma_delta,
        mode,
        semibound: f64::NAN,
        trace,
        mass_factor,
        mass_l,
    };
    op.semibound = op.smallest_eigenvalue()?;
    Ok(op)
}

/// Assembles `M_Ω`, `K`, `M_Γδ` for validated coefficients and realizes them.
pub fn realize(mesh: &Mesh, coeffs: &Validated, mode: MassMode) -> Result<RealizedOperator> {
    let m = assemble_mass(mesh, mode);
    let k = assemble_stiffness(mesh, coeffs)?;
    let mgd = assemble_boundary_mass(mesh, &coeffs.coefficients().delta);
    discrete_realization(m, k, mgd, mode, mesh.boundary_trace())
}

impl RealizedOperator {
    pub fn dim(&self) -> usize {
        self.m_omega.nrows()
    }

    /// `K + M_Γδ`.
    pub fn form_matrix(&self) -> DMatrix<f64> {
        &self.k + &self.m_gamma_delta
    }

    pub fn has_robin_term(&self) -> bool {
        self.m_gamma_delta.diagonal().iter().any(|&d| d != 0.0)
    }

    pub fn solve_mass(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.mass_factor.solve(rhs)
    }

    pub fn solve_mass_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        crate::dense::cholesky_solve(&self.mass_l, rhs)
    }

    /// `B_h u`.
    pub fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.dim() {
            return Err(Error::shape("interior vector", self.dim(), u.len()));
        }
        Ok(self.solve_mass(&(&self.k * u + &self.m_gamma_delta * u)))
    }

    /// Dense `B_h`.
    pub fn realization_matrix(&self) -> DMatrix<f64> {
        self.solve_mass_matrix(&self.form_matrix())
    }

    /// Inverse iteration with unit shift started from the constant vector,
    /// which is never orthogonal to the positive ground state.
    fn smallest_eigenvalue(&self) -> Result<f64> {
        let n = self.dim();
        let s = self.form_matrix();
        let shifted = Cholesky::new(&s + &self.m_omega)
            .ok_or(Error::NotSpd("K + M_gd + M"))?;
        let mut x = DVector::from_element(n, 1.0);
        let mut lambda = f64::NAN;
        for _ in 0..1000 {
            let mx = &self.m_omega * &x;
            x = shifted.solve(&mx);
            let norm = x.dot(&(&self.m_omega * &x)).sqrt();
            x /= norm;
            let next = x.dot(&(&s * &x));
            // absolute below 1, matching the unit shift
            let done = (next - lambda).abs() <= 1e-14 * next.abs().max(1.0);
            lambda = next;
            if done {
                break;
            }
        }
        Ok(lambda)
    }
}

/// Weak co-normal trace: the boundary vector `g` with
/// `⟨div Q∇u, v⟩ + ⟨Q∇u, ∇v⟩ = ⟨g, tr v⟩_Γ` for all discrete `v`, where
/// `div Q∇u = -w`. Equals `W⁻¹ E (K u - M_Ω w)`.
pub fn weak_conormal_trace(
    op: &RealizedOperator,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = op.dim();
    if u.len() != n {
        return Err(Error::shape("u", n, u.len()));
    }
    if w.len() != n {
        return Err(Error::shape("w", n, w.len()));
    }
    let r = &op.k * u - &op.m_omega * w;
    let er = op.trace.restrict(&r)?;
    Ok(DVector::from_iterator(
        er.len(),
        er.iter().zip(&op.trace.weights).map(|(v, w)| v / w),
    ))
}

#[derive(Debug, Clone)]
pub struct SecondOrderSolution {
    pub u: DVector<f64>,
    /// `‖rhs - (λM + K + M_Γδ)u‖ / ‖rhs‖` (0 for zero data).
    pub relative_residual: f64,
    /// Set when the singular Neumann case returned the mean-zero representative.
    pub mean_zero: bool,
}

/// Solves `(λ M_Ω + K + M_Γδ) u = M_Ω f + Eᵀ W g`, the weak form of
/// `λu - div Q∇u = f`, `∂_ν^Q u + δ u = g`.
///
/// For `λ = 0` without Robin term the system is singular; compatible data
/// (`∫f + ∫g = 0`) yields the mean-zero solution, anything else is an error
/// carrying the defect.
pub fn solve_second_order(
    op: &RealizedOperator,
    lambda: f64,
    f: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<SecondOrderSolution> {
    let n = op.dim();
    if f.len() != n {
        return Err(Error::shape("f", n, f.len()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Precondition(format!("lambda must be >= 0, got {lambda}")));
    }
    let rhs = &op.m_omega * f + op.trace.extend(&op.trace.weigh(g))?;
    let mut sys = op.form_matrix() + &op.m_omega * lambda;

    let singular = lambda == 0.0 && !op.has_robin_term();
    let mut b = rhs.clone();
    if singular {
        let ones = DVector::from_element(n, 1.0);
        let m1 = &op.m_omega * &ones;
        let measure = ones.dot(&m1);
        let defect = ones.dot(&rhs);
        let scale = (&op.m_omega * f.abs()).sum() + op.trace.weigh(&g.abs()).sum();
        if defect.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Singular { defect });
        }
        b -= &m1 * (defect / measure);
        // K + M11ᵀM/|Ω| is SPD and its solution is automatically mean-zero
        sys += &m1 * m1.transpose() / measure;
    }
    let chol = Cholesky::new(sys.clone()).ok_or(Error::NotSpd("second-order system"))?;
    let u = chol.solve(&b);
    let res = (&b - &sys * &u).norm();
    let bn = b.norm();
    Ok(SecondOrderSolution {
        relative_residual: if bn > 0.0 { res / bn } else { res },
        u,
        mean_zero: singular,
    })
}
