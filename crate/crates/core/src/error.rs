use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("mesh too coarse: need at least {min} cells per direction, got {got}")]
    TooCoarse { min: usize, got: usize },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("principal symbol not elliptic: a0 = {value:e} at x = {point:?}")]
    NotElliptic { value: f64, point: Vec<f64> },

    #[error("shape mismatch: expected length {expected}, got {got} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(&'static str),

    #[error("singular system: data violates the compatibility condition (defect {defect:e})")]
    Singular { defect: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("expression error: {0}")]
    Expression(String),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            what,
            expected,
            got,
        }
    }
}
