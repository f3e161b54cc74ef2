//! Plain-text artifacts: coordinate CSV for matrices, eigenvalue and
//! trajectory CSV, diagnostics JSON and minimal SVG polyline plots.
//!
//! Floats are written with `{:e}`, the shortest representation that parses
//! back to the same value, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::mesh::Mesh;
use crate::semigroup::{Dip, Trajectory};
use crate::spectral::EigenDecomposition;

/// `row,col,value` for every entry with `|value| > drop`.
pub fn write_coo_csv(w: &mut impl Write, m: &DMatrix<f64>, drop: f64) -> io::Result<()> {
    writeln!(w, "row,col,value")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v.abs() > drop {
                writeln!(w, "{i},{j},{v:e}")?;
            }
        }
    }
    Ok(())
}

/// `k,lambda,residual` with `k` starting at 1.
pub fn write_eigen_csv(w: &mut impl Write, d: &EigenDecomposition) -> io::Result<()> {
    writeln!(w, "k,lambda,residual")?;
    for (k, (l, r)) in d.eigenvalues.iter().zip(&d.residuals).enumerate() {
        writeln!(w, "{},{l:e},{r:e}", k + 1)?;
    }
    Ok(())
}

/// `k,node_id,value` for the first `count` eigenvectors.
pub fn write_eigenvectors_csv(w: &mut impl Write, d: &EigenDecomposition, count: usize) -> io::Result<()> {
    writeln!(w, "k,node_id,value")?;
    for k in 0..count.min(d.len()) {
        for (i, v) in d.eigenvectors.column(k).iter().enumerate() {
            writeln!(w, "{},{i},{v:e}", k + 1)?;
        }
    }
    Ok(())
}

/// `t,node_id,value,component`. Boundary rows use the mesh node id of the
/// boundary node.
pub fn write_trajectory_csv(w: &mut impl Write, traj: &Trajectory, mesh: &Mesh) -> io::Result<()> {
    writeln!(w, "t,node_id,value,component")?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        for (i, v) in s.u1.iter().enumerate() {
            writeln!(w, "{t:e},{i},{v:e},interior")?;
        }
        for (&i, v) in mesh.boundary_nodes.iter().zip(s.u2.iter()) {
            writeln!(w, "{t:e},{i},{v:e},boundary")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub t0: Option<f64>,
    pub dip: Option<Dip>,
    /// Least-squares slope of `-log ‖𝒯(t)f - f̄‖_𝓗` against `t`.
    pub decay_fit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl Plot {
    /// Renders the series as polylines on shared axes. Non-finite points and,
    /// with `log_x`, nonpositive abscissae are skipped.
    pub fn to_svg(&self) -> String {
        let fx = |x: f64| if self.log_x { x.log10() } else { x };
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
                    .map(|&(x, y)| (fx(x), y))
                    .collect()
            })
            .collect();
        let all = pts.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 <= 0.0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        if y0 < 0.0 && y1 > 0.0 {
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN}" x2="{0}" y1="{1:.2}" y2="{1:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                WIDTH - MARGIN,
                sy(0.0)
            );
        }
        let tick = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{}" text-anchor="start">{}</text><text x="{}" y="{}" text-anchor="end">{}</text>"#,
            HEIGHT - MARGIN + 16.0,
            tick(x0, self.log_x),
            WIDTH - MARGIN,
            HEIGHT - MARGIN + 16.0,
            tick(x1, self.log_x)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text><text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            HEIGHT - MARGIN,
            tick(y0, false),
            MARGIN - 4.0,
            MARGIN + 10.0,
            tick(y1, false)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (i, (series, p)) in self.series.iter().zip(&pts).enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
                WIDTH - MARGIN + 4.0,
                MARGIN + 14.0 * (i as f64 + 1.0),
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coo_skips_small_entries_and_round_trips() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1e-300, -0.1]);
        let mut out = Vec::new();
        write_coo_csv(&mut out, &m, 0.0).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines, ["row,col,value", "0,0,1e0", "1,0,1e-300", "1,1,-1e-1"]);
        let back: f64 = lines[3].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(back, -0.1);
    }

    #[test]
    fn svg_is_well_formed_with_degenerate_data() {
        let plot = Plot {
            title: "a < b".into(),
            log_x: true,
            series: vec![Series {
                label: "flat".into(),
                points: vec![(0.0, 1.0), (1.0, 1.0), (10.0, f64::NAN)],
            }],
            ..Default::default()
        };
        let svg = plot.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }
}
