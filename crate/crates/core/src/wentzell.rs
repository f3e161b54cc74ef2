//! The discrete product space `𝓗 = L²(Ω) × L²(Γ, β⁻¹dS)` and the Wentzell
//! form `a(u,v) = ⟨α B u, B v⟩_Ω + ⟨γ u, v⟩_{Γ,β}` on coupled states.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::coefficients::ScalarField;
use crate::dense::tr_mul;
use crate::elliptic::{assemble_weighted_mass, RealizedOperator, Validated};
use crate::sparse::{Sparse, SparseCholesky};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTrace, Mesh};

/// An element of discrete `𝓗`: interior nodal values and boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    pub u1: DVector<f64>,
    pub u2: DVector<f64>,
}

impl ProductState {
    pub fn new(u1: DVector<f64>, u2: DVector<f64>) -> Self {
        ProductState { u1, u2 }
    }

    /// The coupled state `(u, E u)`.
    pub fn coupled(trace: &BoundaryTrace, u1: DVector<f64>) -> Result<Self> {
        let u2 = trace.restrict(&u1)?;
        Ok(ProductState { u1, u2 })
    }

    /// Samples `f1` on all nodes and `f2` on boundary nodes.
    pub fn sample(mesh: &Mesh, f1: impl Fn(&[f64]) -> f64, f2: impl Fn(&[f64]) -> f64) -> Self {
        let u1 = mesh.interpolate(f1);
        let u2 = DVector::from_iterator(mesh.num_boundary_nodes(), mesh.boundary_points().map(f2));
        ProductState { u1, u2 }
    }

    pub fn check_shape(&self, trace: &BoundaryTrace) -> Result<()> {
        if self.u1.len() != trace.num_nodes {
            return Err(Error::shape("interior component", trace.num_nodes, self.u1.len()));
        }
        if self.u2.len() != trace.len() {
            return Err(Error::shape("boundary component", trace.len(), self.u2.len()));
        }
        Ok(())
    }

    /// `u2 = E u1` to `1e-12` (relative to the largest entry when above 1).
    pub fn is_coupled(&self, trace: &BoundaryTrace) -> bool {
        let Ok(eu) = trace.restrict(&self.u1) else {
            return false;
        };
        if eu.len() != self.u2.len() {
            return false;
        }
        let scale = self.u1.amax().max(self.u2.amax()).max(1.0);
        (&eu - &self.u2).amax() <= 1e-12 * scale
    }

    /// Smallest nodal value over interior and boundary components.
    pub fn min_value(&self) -> f64 {
        self.u1.min().min(self.u2.min())
    }

    pub fn max_value(&self) -> f64 {
        self.u1.max().max(self.u2.max())
    }
}

/// `M_H = M_Ω + Eᵀ diag(w/β) E` on coupled coordinates, together with the
/// pieces needed for the inner product of decoupled states.
#[derive(Debug, Clone)]
pub struct ProductMass {
    pub m_h: DMatrix<f64>,
    pub m_omega: DMatrix<f64>,
    /// `w_j / β(x_j)` per boundary node.
    pub boundary_weights: DVector<f64>,
    pub trace: BoundaryTrace,
    factor: Cholesky<f64, Dyn>,
    l: DMatrix<f64>,
}

pub fn assemble_product_mass(
    mesh: &Mesh,
    m_omega: &DMatrix<f64>,
    beta: &ScalarField,
) -> Result<ProductMass> {
    let n = mesh.num_nodes();
    if m_omega.nrows() != n {
        return Err(Error::shape("interior mass", n, m_omega.nrows()));
    }
    let trace = mesh.boundary_trace();
    let mut bw = DVector::zeros(trace.len());
    for (j, x) in mesh.boundary_points().enumerate() {
        let b = beta.eval(x, j);
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Hypothesis(format!(
                "beta must be positive and finite on the boundary, got {b} at {x:?}"
            )));
        }
        bw[j] = trace.weights[j] / b;
    }
    let mut m_h = m_omega.clone();
    for (j, &i) in trace.nodes.iter().enumerate() {
        m_h[(i, i)] += bw[j];
    }
    let factor = Cholesky::new(m_h.clone()).ok_or(Error::NotSpd("product mass M_H"))?;
    let l = factor.l();
    Ok(ProductMass {
        m_h,
        m_omega: m_omega.clone(),
        boundary_weights: bw,
        trace,
        factor,
        l,
    })
}

impl ProductMass {
    pub fn dim(&self) -> usize {
        self.m_h.nrows()
    }

    /// `⟨x, y⟩_𝓗 = x1ᵀ M_Ω y1 + Σ_j (w_j/β_j) x2_j y2_j`, valid for decoupled
    /// states.
    pub fn inner(&self, x: &ProductState, y: &ProductState) -> f64 {
        x.u1.dot(&(&self.m_omega * &y.u1)) + x.u2.component_mul(&self.boundary_weights).dot(&y.u2)
    }

    pub fn norm(&self, x: &ProductState) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    /// `xᵀ M_H y` for coupled coordinates.
    pub fn inner_coupled(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.m_h * y))
    }

    pub fn norm_coupled(&self, x: &DVector<f64>) -> f64 {
        self.inner_coupled(x, x).max(0.0).sqrt()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }

    /// Lower Cholesky factor `L_H` with `M_H = L_H L_Hᵀ`.
    pub fn cholesky_l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `M_Ω f1 + Eᵀ diag(w/β) f2`: the functional `v ↦ ⟨f, (v, Ev)⟩_𝓗`.
    pub fn load(&self, f: &ProductState) -> Result<DVector<f64>> {
        f.check_shape(&self.trace)?;
        let b = self.trace.extend(&f.u2.component_mul(&self.boundary_weights))?;
        Ok(&self.m_omega * &f.u1 + b)
    }

    pub fn to_state(&self, v: DVector<f64>) -> ProductState {
        let u2 = self.trace.restrict(&v).expect("coupled vector has mesh length");
        ProductState { u1: v, u2 }
    }
}

/// The `𝓗`-orthogonal projection onto coupled states: solves
/// `M_H v = M_Ω f1 + Eᵀ diag(w/β) f2`.
pub fn project_to_coupled(mass: &ProductMass, f: &ProductState) -> Result<ProductState> {
    let rhs = mass.load(f)?;
    Ok(mass.to_state(mass.solve(&rhs)))
}

/// Assembled Wentzell operator on coupled coordinates.
#[derive(Debug, Clone)]
pub struct WentzellSystem {
    pub a: DMatrix<f64>,
    pub mass: ProductMass,
    pub order_power: usize,
    /// `G` with `GᵀG = A + shift·M_H`; the rows are `L_αᵀ P`, then
    /// `√shift L_Ωᵀ` when the shift is positive, then one row per boundary node.
    pub factor: DMatrix<f64>,
    /// `max(0, -min γ)`, making every boundary weight `γ + shift` nonnegative.
    pub shift: f64,
    /// `γ_j w_j / β_j` per boundary node.
    pub gamma_weights: DVector<f64>,
    /// Whether `δ` is nonzero somewhere.
    pub robin: bool,
    parts: Parts,
}

/// The pieces of `A = (S M⁻¹)^m M_α (M⁻¹ S)^m + Eᵀ diag(γw/β) E`, kept so that
/// `A u` can be applied without the rounding of the dense product.
#[derive(Debug, Clone)]
struct Parts {
    s: Sparse,
    m_alpha: Sparse,
    mass: SparseCholesky,
    power: usize,
}

impl WentzellSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `γ ≡ 0` and `δ ≡ 0`: constants span the kernel and the mean is conserved.
    pub fn is_conservative(&self) -> bool {
        !self.robin && self.gamma_weights.iter().all(|&g| g == 0.0)
    }

    /// `A u` through the sparse factors `S`, `M_Ω`, `M_α`. Unlike the dense
    /// `A`, this keeps `𝟙ᵀ A u = 0` to rounding in the entries of `S`.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let p = &self.parts;
        let mut z = u.clone();
        for _ in 0..p.power {
            z = p.mass.solve(&p.s.mul(&z));
        }
        let mut t = p.m_alpha.mul(&z);
        for _ in 0..p.power {
            t = p.s.mul(&p.mass.solve(&t));
        }
        for (j, &i) in self.mass.trace.nodes.iter().enumerate() {
            t[i] += self.gamma_weights[j] * u[i];
        }
        t
    }
}

/// Builds `A = Pᵀ M_α P + Eᵀ diag(γ w/β) E` with `P = B_h` for `k = 1` and
/// `P = B_h^{2k}` for `k ≥ 2` (Laplacian with Neumann condition only).
pub fn assemble_wentzell_form(
    op: &RealizedOperator,
    mesh: &Mesh,
    coeffs: &Validated,
    k: usize,
) -> Result<WentzellSystem> {
    let n = op.dim();
    if mesh.num_nodes() != n {
        return Err(Error::shape("mesh nodes", n, mesh.num_nodes()));
    }
    if k == 0 {
        return Err(Error::Precondition("order power k must be >= 1".into()));
    }
    let c = coeffs.coefficients();
    if k > 1 {
        if !c.q.is_identity(mesh.dimension) {
            return Err(Error::Unsupported(
                "higher-order forms are defined for Q = I only".into(),
            ));
        }
        if op.has_robin_term() {
            return Err(Error::Unsupported(
                "higher-order forms are defined for the Neumann case (delta = 0) only".into(),
            ));
        }
    }

    let b = op.realization_matrix();
    let p = if k == 1 {
        b
    } else {
        let mut p = b.clone();
        for _ in 1..2 * k {
            p = &b * &p;
        }
        p
    };

    let m_alpha = assemble_weighted_mass(mesh, &c.alpha, op.mode);
    let l_alpha = Cholesky::new(m_alpha.clone())
        .ok_or(Error::NotSpd("alpha-weighted mass"))?
        .l();
    let top = tr_mul(&l_alpha, &p);
    let mut a = tr_mul(&top, &top);
    mirror_lower(&mut a);

    let mass = assemble_product_mass(mesh, &op.m_omega, &c.beta)?;
    let bv = c.boundary_values(mesh);
    let nb = mass.trace.len();
    let gamma_weights = DVector::from_fn(nb, |j, _| bv.gamma[j] * mass.boundary_weights[j]);
    for (j, &i) in mass.trace.nodes.iter().enumerate() {
        a[(i, i)] += gamma_weights[j];
    }

    let shift = bv.gamma.iter().fold(0.0_f64, |s, &g| if -g > s { -g } else { s });
    let extra = if shift > 0.0 { n } else { 0 };
    let mut factor = DMatrix::zeros(n + extra + nb, n);
    factor.rows_mut(0, n).copy_from(&top);
    if shift > 0.0 {
        let lm = Cholesky::new(op.m_omega.clone())
            .ok_or(Error::NotSpd("interior mass"))?
            .l();
        factor
            .rows_mut(n, n)
            .copy_from(&(lm.transpose() * shift.sqrt()));
    }
    for (j, &i) in mass.trace.nodes.iter().enumerate() {
        let wgt = (bv.gamma[j] + shift) * mass.boundary_weights[j];
        factor[(n + extra + j, i)] = wgt.max(0.0).sqrt();
    }

    Ok(WentzellSystem {
        a,
        mass,
        order_power: k,
        factor,
        shift,
        gamma_weights,
        robin: op.has_robin_term(),
        parts: Parts {
            s: Sparse::from_dense(&op.form_matrix()),
            m_alpha: Sparse::from_dense(&m_alpha),
            mass: SparseCholesky::new(&Sparse::from_dense(&op.m_omega), "interior mass")?,
            power: if k == 1 { 1 } else { 2 * k },
        },
    })
}

/// Copies the lower triangle onto the upper one.
pub(crate) fn mirror_lower(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = a[(j, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientSet, MatrixField};
    use crate::elliptic::{realize, MassMode};
    use crate::mesh::{build_interval_mesh, build_rectangle_mesh};

    fn system(mesh: &Mesh, c: CoefficientSet, k: usize) -> WentzellSystem {
        let v = Validated::new(mesh, c).unwrap();
        let op = realize(mesh, &v, MassMode::Consistent).unwrap();
        assemble_wentzell_form(&op, mesh, &v, k).unwrap()
    }

    #[test]
    fn product_mass_measures() {
        let unit = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let sq = build_rectangle_mesh(1.0, 1.0, 4, 4).unwrap();
        for (mesh, beta, want) in [(&unit, 1.0, 3.0), (&unit, 2.0, 2.0), (&sq, 1.0, 5.0)] {
            let m = crate::elliptic::assemble_mass(mesh, MassMode::Consistent);
            let pm = assemble_product_mass(mesh, &m, &beta.into()).unwrap();
            let ones = DVector::from_element(mesh.num_nodes(), 1.0);
            assert!((pm.inner_coupled(&ones, &ones) - want).abs() < 1e-12 * want);
        }
        let m = crate::elliptic::assemble_mass(&unit, MassMode::Consistent);
        assert!(assemble_product_mass(&unit, &m, &0.0.into()).is_err());
    }

    #[test]
    fn coupled_membership() {
        let mesh = build_interval_mesh(0.0, 1.0, 4).unwrap();
        let tr = mesh.boundary_trace();
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = ProductState::coupled(&tr, u.clone()).unwrap();
        assert_eq!(s.u2.as_slice(), &[1.0, 5.0]);
        assert!(s.is_coupled(&tr));
        let d = ProductState::new(u, DVector::from_vec(vec![1.0, 4.0]));
        assert!(!d.is_coupled(&tr));
    }

    #[test]
    fn projection_properties() {
        let mesh = build_interval_mesh(0.0, 1.0, 64).unwrap();
        let m = crate::elliptic::assemble_mass(&mesh, MassMode::Consistent);
        let pm = assemble_product_mass(&mesh, &m, &1.0.into()).unwrap();
        let f = ProductState::sample(&mesh, |x| x[0].sin(), |x| x[0].sin());
        let p = project_to_coupled(&pm, &f).unwrap();
        assert!((&p.u1 - &f.u1).amax() < 1e-12);

        let d = ProductState::new(DVector::zeros(65), DVector::from_element(2, 1.0));
        let p = project_to_coupled(&pm, &d).unwrap();
        assert!(p.is_coupled(&pm.trace));
        assert!(pm.norm(&p) <= pm.norm(&d));
        assert!((pm.norm(&d) - 2f64.sqrt()).abs() < 1e-14);
        let pp = project_to_coupled(&pm, &p).unwrap();
        assert!((&pp.u1 - &p.u1).amax() < 1e-12);
        // residual is H-orthogonal to every coupled basis state
        let r = ProductState::new(&d.u1 - &p.u1, &d.u2 - &p.u2);
        for i in 0..65 {
            let mut e = DVector::zeros(65);
            e[i] = 1.0;
            let e = ProductState::coupled(&pm.trace, e).unwrap();
            assert!(pm.inner(&r, &e).abs() < 1e-10);
        }
    }

    #[test]
    fn neumann_form_kills_constants_and_is_symmetric() {
        let mesh = build_interval_mesh(0.0, 1.0, 32).unwrap();
        let s = system(&mesh, CoefficientSet::default(), 1);
        assert_eq!(s.a, s.a.transpose());
        let ones = DVector::from_element(33, 1.0);
        assert!((&s.a * &ones).amax() < 1e-10 * s.a.amax().max(1.0));
        let g = tr_mul(&s.factor, &s.factor);
        assert!((&g - &s.a).amax() < 1e-10 * s.a.amax());
    }

    #[test]
    fn form_consistency() {
        let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
        let c = CoefficientSet::default()
            .with_alpha(ScalarField::expr("1 + x").unwrap())
            .with_gamma(ScalarField::expr("2 - 3*x").unwrap())
            .with_beta(ScalarField::expr("1 + x").unwrap())
            .with_delta(0.7);
        let v = Validated::new(&mesh, c.clone()).unwrap();
        let op = realize(&mesh, &v, MassMode::Consistent).unwrap();
        let s = assemble_wentzell_form(&op, &mesh, &v, 1).unwrap();
        assert_eq!(s.shift, 1.0);
        let m_alpha = assemble_weighted_mass(&mesh, &c.alpha, MassMode::Consistent);
        let x = mesh.interpolate(|p| (2.0 * p[0]).cos() + p[0]);
        let bx = op.apply(&x).unwrap();
        let ex = op.trace.restrict(&x).unwrap();
        // γ(0)=2, γ(1)=-1, β(0)=1, β(1)=2
        let want = bx.dot(&(&m_alpha * &bx)) + 2.0 * ex[0] * ex[0] - 0.5 * ex[1] * ex[1];
        let got = x.dot(&(&s.a * &x));
        assert!((got - want).abs() < 1e-10 * want.abs());
        let gtg = tr_mul(&s.factor, &s.factor);
        let shifted = &s.a + &s.mass.m_h * s.shift;
        assert!((&gtg - &shifted).amax() < 1e-10 * s.a.amax());
    }

    #[test]
    fn alpha_scaling_is_linear() {
        let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
        let s1 = system(&mesh, CoefficientSet::default().with_gamma(0.4), 1);
        let s3 = system(&mesh, CoefficientSet::default().with_gamma(0.4).with_alpha(3.0), 1);
        assert_eq!(s1.gamma_weights, s3.gamma_weights);
        let strip = |s: &WentzellSystem| {
            let mut a = s.a.clone();
            for (j, &i) in s.mass.trace.nodes.iter().enumerate() {
                a[(i, i)] -= s.gamma_weights[j];
            }
            a
        };
        let (top1, top3) = (strip(&s1), strip(&s3));
        assert!((&top3 - &top1 * 3.0).amax() < 1e-10 * top3.amax());
    }

    #[test]
    fn higher_order_guards() {
        let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let v = Validated::new(&mesh, CoefficientSet::default().with_delta(1.0)).unwrap();
        let op = realize(&mesh, &v, MassMode::Consistent).unwrap();
        assert!(matches!(assemble_wentzell_form(&op, &mesh, &v, 2), Err(Error::Unsupported(_))));
        assert!(matches!(assemble_wentzell_form(&op, &mesh, &v, 0), Err(Error::Precondition(_))));
        let v = Validated::new(&mesh, CoefficientSet::default().with_q(MatrixField::Isotropic(2.0.into()))).unwrap();
        let op = realize(&mesh, &v, MassMode::Consistent).unwrap();
        assert!(matches!(assemble_wentzell_form(&op, &mesh, &v, 2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn second_power_kills_constants() {
        let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
        let s = system(&mesh, CoefficientSet::default(), 2);
        let ones = DVector::from_element(17, 1.0);
        assert!((&s.a * &ones).amax() < 1e-10 * s.a.amax());
    }

    #[test]
    fn structured_apply_matches_dense_form() {
        let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
        let c = CoefficientSet::default()
            .with_alpha(ScalarField::expr("1 + x").unwrap())
            .with_gamma(ScalarField::expr("2 - 3*x").unwrap())
            .with_delta(0.3);
        let x = DVector::from_fn(17, |i, _| ((i * 5) % 7) as f64 - 3.0);
        for k in [1, 2] {
            let c = if k == 1 { c.clone() } else { CoefficientSet::default().with_gamma(0.5) };
            let s = system(&mesh, c, k);
            let dense = &s.a * &x;
            assert!((s.apply(&x) - &dense).amax() < 1e-10 * dense.amax());
        }
    }
}
