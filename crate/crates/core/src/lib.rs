//! Adaptive space-time isogeometric solver for the heat equation `∂t u − Δx u = f`
//! on a single NURBS patch.
//!
//! Time is treated as the last parameter direction. Trial spaces are truncated
//! hierarchical B-splines, the discrete scheme is the locally time-upwind
//! stabilized Galerkin form, and errors are controlled by functional majorants
//! and an error identity.

pub mod adaptivity;
pub mod assembly;
pub mod cases;
pub mod dense;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod geometry;
pub mod hier;
pub mod parallel;
pub mod quadrature;
pub mod sparse;
pub mod spline;

pub use error::{Error, Result};
