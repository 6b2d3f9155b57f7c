//! Univariate and tensor-product B-spline bases on open knot vectors.

mod knots;
pub(crate) mod tensor;

pub use knots::{KnotVector, RefinementMatrix, UnivariateEval};
pub use tensor::{BasisEval, TensorSplineSpace};

/// Largest supported parameter dimension (`d + 1`).
pub const MAX_DIM: usize = 3;
