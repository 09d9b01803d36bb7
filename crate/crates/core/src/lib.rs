//! Space-time Trefftz discontinuous Galerkin methods for the first-order
//! acoustic wave equations.

pub mod basis;
pub mod field;
pub mod polynomial;
pub mod quadrature;
pub mod mesh;
pub mod assembly;
pub mod solver;
pub mod analysis;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
