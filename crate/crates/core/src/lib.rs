//! Discrete lab for the fourth-order operator `B(αB)`, `B = -div Q∇`, with
//! Wentzell or Robin boundary conditions on `L²(Ω) × L²(Γ, β⁻¹dS)`.

pub mod acceptance;
pub mod coefficients;
pub mod dense;
pub mod elliptic;
pub mod error;
pub mod export;
pub mod expr;
pub mod mesh;
pub mod semigroup;
pub mod sparse;
pub mod spectral;
pub mod wentzell;

pub use error::{Error, Result};
