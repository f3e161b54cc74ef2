//! Configuration-driven front end: `validate`, `assemble`, `eigs`, `oracle`,
//! `evolve` and `verify`, writing CSV, JSON and SVG artifacts to an output
//! directory.

pub mod commands;
pub mod config;

use serde::Serialize;

pub use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const HYPOTHESIS: i32 = 1;
    pub const NUMERICAL: i32 = 2;
    pub const ACCEPTANCE: i32 = 3;
}

#[derive(Debug)]
pub enum CliError {
    Core(wentzell::Error),
    Config(String),
    Io(std::io::Error),
    Acceptance { failed: Vec<u32> },
}

impl From<wentzell::Error> for CliError {
    fn from(e: wentzell::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Acceptance { failed } => write!(f, "acceptance criteria failed: {failed:?}"),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(wentzell::Error::Hypothesis(_) | wentzell::Error::NotElliptic { .. }) => exit::HYPOTHESIS,
            CliError::Acceptance { .. } => exit::ACCEPTANCE,
            _ => exit::NUMERICAL,
        }
    }

    pub fn kind(&self) -> &'static str {
        use wentzell::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Hypothesis(_) | E::NotElliptic { .. } => "hypothesis",
                E::NotSpd(_) | E::Singular { .. } | E::Assembly(_) => "numerical",
                E::Precondition(_) | E::Shape { .. } | E::Unsupported(_) => "precondition",
                E::InvalidDomain(_) | E::TooCoarse { .. } => "domain",
                _ => "numerical",
            },
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Acceptance { .. } => "acceptance",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.exit_code(),
            kind: self.kind(),
            message: self.to_string(),
        }
    }
}
