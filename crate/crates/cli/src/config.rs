//! The JSON run configuration. Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wentzell::coefficients::{CoefficientSet, ScalarField};
use wentzell::elliptic::MassMode;
use wentzell::mesh::{build_interval_mesh, build_rectangle_mesh, Mesh};
use wentzell::semigroup::log_grid;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Domain,
    #[serde(default)]
    pub coefficients: CoefficientSet,
    /// `lumped` or `consistent`; chosen from the mesh size when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<MassMode>,
    #[serde(default = "one")]
    pub order_power: usize,
    #[serde(default = "ten")]
    pub eigen_count: usize,
    #[serde(default)]
    pub times: TimeGrid,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Seed for the randomized checks of `verify`; `--seed` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "yes")]
    pub plots: bool,
    #[serde(default)]
    pub dump_eigenvectors: bool,
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Domain {
    Interval { a: f64, b: f64, n: usize },
    Rectangle { lx: f64, ly: f64, nx: usize, ny: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeGrid {
    List { values: Vec<f64> },
    Linear { from: f64, to: f64, count: usize },
    Log { from: f64, to: f64, count: usize },
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::Log {
            from: 1e-6,
            to: 1.0,
            count: 61,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Scheme {
    #[default]
    Spectral,
    Theta {
        theta: f64,
        dt: f64,
        #[serde(default)]
        startup_steps: usize,
    },
}

/// Initial state. `u2` defaults to the trace of `u1`; a per-cell table here
/// means one value per node (resp. per boundary node).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub u1: ScalarField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2: Option<ScalarField>,
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData {
            u1: ScalarField::expr("x").expect("valid expression"),
            u2: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    /// The reference setting: unit interval, 1024 cells, default coefficients.
    pub fn reference() -> Self {
        RunConfig {
            domain: Domain::Interval { a: 0.0, b: 1.0, n: 1024 },
            coefficients: CoefficientSet::default(),
            mass: Some(MassMode::Consistent),
            order_power: 1,
            eigen_count: 10,
            times: TimeGrid::default(),
            scheme: Scheme::default(),
            initial: InitialData::default(),
            output_dir: None,
            seed: None,
            plots: true,
            dump_eigenvectors: false,
        }
    }

    pub fn mesh(&self) -> Result<Mesh, CliError> {
        Ok(match self.domain {
            Domain::Interval { a, b, n } => build_interval_mesh(a, b, n)?,
            Domain::Rectangle { lx, ly, nx, ny } => build_rectangle_mesh(lx, ly, nx, ny)?,
        })
    }

    pub fn mass_mode(&self, mesh: &Mesh) -> MassMode {
        self.mass.unwrap_or_else(|| MassMode::default_for(mesh))
    }

    pub fn time_values(&self) -> Result<Vec<f64>, CliError> {
        let v = match &self.times {
            TimeGrid::List { values } => values.clone(),
            TimeGrid::Linear { from, to, count } => match count {
                0 => Vec::new(),
                1 => vec![*from],
                c => (0..*c)
                    .map(|i| from + (to - from) * i as f64 / (*c - 1) as f64)
                    .collect(),
            },
            TimeGrid::Log { from, to, count } => {
                if !(*from > 0.0 && *to > 0.0) {
                    return Err(CliError::Config("log time grid needs positive end points".into()));
                }
                log_grid(*from, *to, *count)
            }
        };
        if v.is_empty() {
            return Err(CliError::Config("time grid is empty".into()));
        }
        if v.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(CliError::Config("times must be finite and >= 0".into()));
        }
        if v.windows(2).any(|w| w[1] < w[0]) {
            return Err(CliError::Config("times must be nondecreasing".into()));
        }
        Ok(v)
    }
}
