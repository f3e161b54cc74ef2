//! Uniform meshes of an interval or a rectangle with nodal (P1 / Q1) shape
//! functions, node-lumped boundary quadrature, and the discrete trace map.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform conforming mesh of a 1D interval or a 2D axis-aligned rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dimension: usize,
    pub nodes: Vec<Vec<f64>>,
    pub elements: Vec<Vec<usize>>,
    pub boundary_nodes: Vec<usize>,
    pub boundary_weights: Vec<f64>,
    pub element_volumes: Vec<f64>,
    /// Cell size per direction.
    pub spacing: Vec<f64>,
    /// Cells per direction.
    pub cells: Vec<usize>,
}

/// Gauss-Legendre abscissa for the 2-point rule on [-1, 1].
const GAUSS2: f64 = 0.577_350_269_189_625_8;

/// Builds `n` equal cells on `(a, b)`. Γ = {a, b} carries the counting measure.
pub fn build_interval_mesh(a: f64, b: f64, n: usize) -> Result<Mesh> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::InvalidDomain(format!("interval ({a}, {b}) is empty")));
    }
    if n < 2 {
        return Err(Error::TooCoarse { min: 2, got: n });
    }
    let h = (b - a) / n as f64;
    let nodes = (0..=n)
        .map(|i| {
            // pin the right endpoint exactly
            let x = if i == n { b } else { a + i as f64 * h };
            vec![x]
        })
        .collect();
    let elements = (0..n).map(|i| vec![i, i + 1]).collect();
    Ok(Mesh {
        dimension: 1,
        nodes,
        elements,
        boundary_nodes: vec![0, n],
        boundary_weights: vec![1.0, 1.0],
        element_volumes: vec![h; n],
        spacing: vec![h],
        cells: vec![n],
    })
}

/// Builds an `nx` x `ny` tensor grid of bilinear cells on `(0, lx) x (0, ly)`.
///
/// Boundary nodes are listed counter-clockwise starting at the origin. Each
/// carries half the length of every boundary edge it touches.
pub fn build_rectangle_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if !(lx.is_finite() && ly.is_finite()) || lx <= 0.0 || ly <= 0.0 {
        return Err(Error::InvalidDomain(format!(
            "rectangle sides must be positive, got {lx} x {ly}"
        )));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::TooCoarse {
            min: 2,
            got: nx.min(ny),
        });
    }
    let hx = lx / nx as f64;
    let hy = ly / ny as f64;
    let id = |i: usize, j: usize| j * (nx + 1) + i;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = if j == ny { ly } else { j as f64 * hy };
        for i in 0..=nx {
            let x = if i == nx { lx } else { i as f64 * hx };
            nodes.push(vec![x, y]);
        }
    }

    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }

    let mut boundary_nodes = Vec::with_capacity(2 * (nx + ny));
    let mut boundary_weights = Vec::with_capacity(2 * (nx + ny));
    let corner = 0.5 * (hx + hy);
    // bottom, left to right (without the last corner)
    for i in 0..nx {
        boundary_nodes.push(id(i, 0));
        boundary_weights.push(if i == 0 { corner } else { hx });
    }
    // right, bottom to top
    for j in 0..ny {
        boundary_nodes.push(id(nx, j));
        boundary_weights.push(if j == 0 { corner } else { hy });
    }
    // top, right to left
    for i in (1..=nx).rev() {
        boundary_nodes.push(id(i, ny));
        boundary_weights.push(if i == nx { corner } else { hx });
    }
    // left, top to bottom
    for j in (1..=ny).rev() {
        boundary_nodes.push(id(0, j));
        boundary_weights.push(if j == ny { corner } else { hy });
    }

    Ok(Mesh {
        dimension: 2,
        nodes,
        elements,
        boundary_nodes,
        boundary_weights,
        element_volumes: vec![hx * hy; nx * ny],
        spacing: vec![hx, hy],
        cells: vec![nx, ny],
    })
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_boundary_nodes(&self) -> usize {
        self.boundary_nodes.len()
    }

    /// λ_d(Ω) as the sum of cell measures.
    pub fn domain_measure(&self) -> f64 {
        self.element_volumes.iter().sum()
    }

    /// Surface measure of Γ under the lumped boundary quadrature.
    pub fn boundary_measure(&self) -> f64 {
        self.boundary_weights.iter().sum()
    }

    /// Row sums of the nodal mass matrix: ∫_Ω φ_i dx.
    pub fn nodal_volumes(&self) -> Vec<f64> {
        let mut vols = vec![0.0; self.num_nodes()];
        for (el, &vol) in self.elements.iter().zip(&self.element_volumes) {
            let share = vol / el.len() as f64;
            for &i in el {
                vols[i] += share;
            }
        }
        vols
    }

    /// Cell center.
    pub fn centroid(&self, cell: usize) -> Vec<f64> {
        let el = &self.elements[cell];
        let mut c = vec![0.0; self.dimension];
        for &i in el {
            for (ck, xk) in c.iter_mut().zip(&self.nodes[i]) {
                *ck += xk;
            }
        }
        c.iter_mut().for_each(|v| *v /= el.len() as f64);
        c
    }

    /// Element quadrature used everywhere coefficients are sampled: the
    /// midpoint in 1D and the 2 x 2 tensor Gauss rule in 2D. Returns
    /// `(point, weight, reference coordinates)`.
    pub fn quadrature(&self, cell: usize) -> Vec<QuadPoint> {
        let c = self.centroid(cell);
        match self.dimension {
            1 => vec![QuadPoint {
                x: c,
                weight: self.element_volumes[cell],
                reference: [0.0, 0.0],
            }],
            _ => {
                let (hx, hy) = (self.spacing[0], self.spacing[1]);
                let mut pts = Vec::with_capacity(4);
                for &sy in &[-GAUSS2, GAUSS2] {
                    for &sx in &[-GAUSS2, GAUSS2] {
                        pts.push(QuadPoint {
                            x: vec![c[0] + 0.5 * hx * sx, c[1] + 0.5 * hy * sy],
                            weight: 0.25 * hx * hy,
                            reference: [sx, sy],
                        });
                    }
                }
                pts
            }
        }
    }

    /// Discrete Dirichlet trace: restriction to boundary nodes, together with
    /// the diagonal surface weights.
    pub fn boundary_trace(&self) -> BoundaryTrace {
        BoundaryTrace {
            num_nodes: self.num_nodes(),
            nodes: self.boundary_nodes.clone(),
            weights: self.boundary_weights.clone(),
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.num_nodes(), self.nodes.iter().map(|x| f(x)))
    }

    pub fn boundary_points(&self) -> impl Iterator<Item = &[f64]> {
        self.boundary_nodes.iter().map(|&i| self.nodes[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadPoint {
    pub x: Vec<f64>,
    pub weight: f64,
    pub reference: [f64; 2],
}

/// The selection map `E` (interior nodal vector to boundary values) and the
/// diagonal weight operator `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub num_nodes: usize,
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl BoundaryTrace {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E u`.
    pub fn restrict(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.num_nodes {
            return Err(Error::shape("interior vector", self.num_nodes, u.len()));
        }
        Ok(DVector::from_iterator(
            self.len(),
            self.nodes.iter().map(|&i| u[i]),
        ))
    }

    /// `Eᵀ g`: zero-extension of boundary values.
    pub fn extend(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        if g.len() != self.len() {
            return Err(Error::shape("boundary vector", self.len(), g.len()));
        }
        let mut u = DVector::zeros(self.num_nodes);
        for (&i, &v) in self.nodes.iter().zip(g.iter()) {
            u[i] += v;
        }
        Ok(u)
    }

    /// `W g`.
    pub fn weigh(&self, g: &DVector<f64>) -> DVector<f64> {
        g.component_mul(&DVector::from_column_slice(&self.weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_nodes_and_boundary() {
        let m = build_interval_mesh(0.0, 1.0, 4).unwrap();
        let xs: Vec<f64> = m.nodes.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.boundary_nodes, vec![0, 4]);
        assert_eq!(m.boundary_weights, vec![1.0, 1.0]);

        let m = build_interval_mesh(0.0, 1.0, 2).unwrap();
        assert!((m.domain_measure() - 1.0).abs() < 1e-15);

        let m = build_interval_mesh(-1.0, 1.0, 8).unwrap();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.nodes[0][0], -1.0);
        assert_eq!(m.nodes[8][0], 1.0);
    }

    #[test]
    fn interval_errors() {
        assert!(matches!(
            build_interval_mesh(1.0, 1.0, 4),
            Err(Error::InvalidDomain(_))
        ));
        assert!(matches!(
            build_interval_mesh(0.0, 1.0, 1),
            Err(Error::TooCoarse { .. })
        ));
        assert!(matches!(
            build_rectangle_mesh(0.0, 1.0, 4, 4),
            Err(Error::InvalidDomain(_))
        ));
        assert!(matches!(
            build_rectangle_mesh(1.0, 1.0, 4, 1),
            Err(Error::TooCoarse { .. })
        ));
    }

    #[test]
    fn rectangle_boundary_quadrature() {
        let m = build_rectangle_mesh(1.0, 1.0, 2, 2).unwrap();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.num_boundary_nodes(), 8);
        assert!((m.boundary_measure() - 4.0).abs() < 1e-14);
        // corner (0,0) is node 0
        assert_eq!(m.boundary_nodes[0], 0);
        assert!((m.boundary_weights[0] - 0.5).abs() < 1e-15);
        // center node is not on the boundary
        assert!(!m.boundary_nodes.contains(&4));

        let m = build_rectangle_mesh(2.0, 1.0, 4, 2).unwrap();
        assert!((m.boundary_measure() - 6.0).abs() < 1e-14);
        assert!((m.domain_measure() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn boundary_nodes_are_unique_and_on_perimeter() {
        let m = build_rectangle_mesh(1.5, 0.5, 5, 3).unwrap();
        let mut seen = m.boundary_nodes.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), m.boundary_nodes.len());
        assert_eq!(seen.len(), 2 * (5 + 3));
        for p in m.boundary_points() {
            let on = p[0] == 0.0 || p[0] == 1.5 || p[1] == 0.0 || p[1] == 0.5;
            assert!(on, "{p:?} not on the perimeter");
        }
    }

    #[test]
    fn trace_restricts_exactly() {
        let m = build_interval_mesh(0.0, 1.0, 4).unwrap();
        let tr = m.boundary_trace();
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(tr.restrict(&u).unwrap().as_slice(), &[1.0, 5.0]);
        assert_eq!(tr.weights, vec![1.0, 1.0]);
        let c = DVector::from_element(5, 2.5);
        assert!(tr.restrict(&c).unwrap().iter().all(|&v| v == 2.5));
        assert!(tr.restrict(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn refinement_preserves_measures() {
        for n in [3, 7, 10] {
            let a = build_rectangle_mesh(1.3, 0.7, n, n + 1).unwrap();
            let b = build_rectangle_mesh(1.3, 0.7, 2 * n, 2 * n + 2).unwrap();
            assert!((a.domain_measure() - b.domain_measure()).abs() < 1e-12);
            assert!((a.boundary_measure() - b.boundary_measure()).abs() < 1e-12);
            assert!((a.boundary_measure() - 4.0).abs() < 1e-12);
            let vol: f64 = a.nodal_volumes().iter().sum();
            assert!((vol - 1.3 * 0.7).abs() < 1e-12);
        }
    }
}
