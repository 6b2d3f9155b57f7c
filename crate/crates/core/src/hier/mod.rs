//! Hierarchical meshes and truncated hierarchical B-spline spaces.

mod mesh;
mod space;

pub use mesh::{Cell, HierarchicalMesh, DEFAULT_MAX_LEVEL};
pub use space::{ActiveEval, CellBasis, FuncId, HierarchicalSplineSpace};
