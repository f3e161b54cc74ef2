use nalgebra::{DVector, Matrix2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wentzell::coefficients::{principal_symbol, validate_coefficients, CoefficientSet, MatrixField};
use wentzell::elliptic::{realize, MassMode, Validated};
use wentzell::mesh::{build_interval_mesh, build_rectangle_mesh, Mesh};
use wentzell::semigroup::{conserved_pairing, evolve_spectral};
use wentzell::spectral::{eig_generalized, EigenDecomposition};
use wentzell::wentzell::{assemble_wentzell_form, project_to_coupled, ProductState, WentzellSystem};

fn system(mesh: &Mesh, coeffs: CoefficientSet, mode: MassMode) -> WentzellSystem {
    let v = Validated::new(mesh, coeffs).unwrap();
    let op = realize(mesh, &v, mode).unwrap();
    assemble_wentzell_form(&op, mesh, &v, 1).unwrap()
}

fn full(sys: &WentzellSystem) -> EigenDecomposition {
    eig_generalized(sys, sys.dim()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn interval_measures_survive_refinement(a in -5.0..5.0f64, len in 0.1..10.0f64, n in 2usize..200) {
        let m = build_interval_mesh(a, a + len, n).unwrap();
        prop_assert_eq!(m.num_nodes(), n + 1);
        prop_assert!(close(m.domain_measure(), len, 1e-12));
        prop_assert!(close(m.nodal_volumes().iter().sum::<f64>(), len, 1e-12));
        prop_assert_eq!(m.boundary_measure(), 2.0);
        let fine = build_interval_mesh(a, a + len, 2 * n).unwrap();
        prop_assert!(close(fine.domain_measure(), m.domain_measure(), 1e-12));
    }

    #[test]
    fn rectangle_measures_survive_refinement(lx in 0.1..4.0f64, ly in 0.1..4.0f64, nx in 2usize..24, ny in 2usize..24) {
        let m = build_rectangle_mesh(lx, ly, nx, ny).unwrap();
        prop_assert_eq!(m.num_nodes(), (nx + 1) * (ny + 1));
        prop_assert_eq!(m.num_boundary_nodes(), 2 * (nx + ny));
        prop_assert!(close(m.domain_measure(), lx * ly, 1e-12));
        prop_assert!(close(m.nodal_volumes().iter().sum::<f64>(), lx * ly, 1e-12));
        prop_assert!(close(m.boundary_measure(), 2.0 * (lx + ly), 1e-12));
        let fine = build_rectangle_mesh(lx, ly, 2 * nx, 2 * ny).unwrap();
        prop_assert!(close(fine.boundary_measure(), m.boundary_measure(), 1e-12));
    }

    #[test]
    fn principal_symbol_is_homogeneous_of_degree_four(
        q11 in 0.5..3.0f64, q12 in -0.4..0.4f64, q22 in 0.5..3.0f64,
        alpha in 0.5..5.0f64, x in -2.0..2.0f64, y in -2.0..2.0f64, s in 0.01..50.0f64,
    ) {
        let q = Matrix2::new(q11, q12, q12, q22);
        let base = principal_symbol(&q, alpha, &[x, y]);
        let scaled = principal_symbol(&q, alpha, &[s * x, s * y]);
        prop_assert!((scaled - s.powi(4) * base).abs() <= 1e-12 * scaled.abs().max(f64::MIN_POSITIVE));
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn raising_coefficients_keeps_validation_passing(alpha in 0.5..4.0f64, bump in 0.0..4.0f64, delta in 0.0..2.0f64) {
        let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let base = CoefficientSet::default().with_alpha(alpha).with_delta(delta);
        let raised = CoefficientSet::default().with_alpha(alpha + bump).with_delta(delta + bump);
        prop_assert!(validate_coefficients(&mesh, &base).unwrap().passed);
        prop_assert!(validate_coefficients(&mesh, &raised).unwrap().passed);
    }

    #[test]
    fn lowering_below_the_bounds_fails_validation(alpha in 0.0..0.49f64, delta in -2.0..-1e-9f64) {
        let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let r = validate_coefficients(&mesh, &CoefficientSet::default().with_alpha(alpha)).unwrap();
        prop_assert!(!r.passed);
        let r = validate_coefficients(&mesh, &CoefficientSet::default().with_delta(delta)).unwrap();
        prop_assert!(r.failures().any(|c| c.name.contains("delta")));
    }
}

#[test]
fn rayleigh_quotients_lie_in_the_spectrum() {
    let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
    let sys = system(&mesh, CoefficientSet::default().with_gamma(-0.5).with_delta(0.3), MassMode::Consistent);
    let d = full(&sys);
    let (lo, hi) = (d.eigenvalues[0], *d.eigenvalues.last().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..64 {
        let u = DVector::from_fn(sys.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let r = u.dot(&(&sys.a * &u)) / u.dot(&(&sys.mass.m_h * &u));
        let slack = 1e-10 * hi;
        assert!(r >= lo - slack && r <= hi + slack, "{r} outside [{lo}, {hi}]");
    }
    // The extreme quotients are attained by the extreme eigenvectors.
    let e = d.vector(0);
    let r = e.dot(&(&sys.a * &e)) / e.dot(&(&sys.mass.m_h * &e));
    assert!((r - lo).abs() <= 1e-10 * hi);
}

#[test]
fn scaling_alpha_scales_the_spectrum() {
    let mesh = build_interval_mesh(0.0, 1.0, 24).unwrap();
    for c in [0.5, 2.0, 7.5] {
        let base = full(&system(&mesh, CoefficientSet::default().with_delta(0.2), MassMode::Lumped));
        let scaled = full(&system(&mesh, CoefficientSet::default().with_delta(0.2).with_alpha(c), MassMode::Lumped));
        for k in 0..12 {
            let (l, s) = (base.eigenvalues[k], scaled.eigenvalues[k]);
            assert!((s - c * l).abs() <= 1e-9 * (c * l).abs(), "k = {k}: {s} vs {}", c * l);
        }
    }
}

#[test]
fn projection_onto_coupled_states_is_idempotent_and_orthogonal() {
    let mesh = build_rectangle_mesh(1.0, 0.5, 6, 4).unwrap();
    let sys = system(&mesh, CoefficientSet::default().with_beta(2.0), MassMode::Consistent);
    let mass = &sys.mass;
    let f = ProductState::sample(&mesh, |x| (3.0 * x[0]).sin() + x[1], |x| 1.0 + x[0] * x[1]);
    assert!(!f.is_coupled(&mass.trace));
    let p = project_to_coupled(mass, &f).unwrap();
    assert!(p.is_coupled(&mass.trace));
    let pp = project_to_coupled(mass, &p).unwrap();
    assert!((&pp.u1 - &p.u1).amax() <= 1e-13 * p.u1.amax());
    let residual = ProductState::new(&f.u1 - &p.u1, &f.u2 - &p.u2);
    for i in 0..mesh.num_nodes() {
        let mut e = DVector::zeros(mesh.num_nodes());
        e[i] = 1.0;
        let v = ProductState::coupled(&mass.trace, e).unwrap();
        assert!(mass.inner(&residual, &v).abs() <= 1e-13 * mass.norm(&f));
    }
    assert!((conserved_pairing(&p, mass) - conserved_pairing(&f, mass)).abs() <= 1e-13);
}

#[test]
fn spectral_evolution_has_the_semigroup_property() {
    let mesh = build_interval_mesh(0.0, 1.0, 32).unwrap();
    let sys = system(
        &mesh,
        CoefficientSet::default().with_q(MatrixField::Isotropic(1.5.into())).with_gamma(0.4),
        MassMode::Consistent,
    );
    let d = full(&sys);
    let f = ProductState::sample(&mesh, |x| x[0] * (1.0 - x[0]), |_| 0.3);
    let (s, t) = (2e-3, 5e-3);
    let direct = evolve_spectral(&d, &sys.mass, &f, &[s + t]).unwrap();
    let first = evolve_spectral(&d, &sys.mass, &f, &[s]).unwrap();
    let composed = evolve_spectral(&d, &sys.mass, &first.states[0], &[t]).unwrap();
    let gap = (&direct.states[0].u1 - &composed.states[0].u1).amax();
    assert!(gap <= 1e-12 * direct.states[0].u1.amax(), "{gap}");
}
