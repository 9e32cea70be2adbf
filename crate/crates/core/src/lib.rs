//! Mathematical core of a vectorized HD-map construction pipeline:
//! permutation-equivalent element modeling, hierarchical bipartite
//! matching, set losses with analytic gradients, Chamfer-AP evaluation,
//! rasterized auxiliary targets, a synthetic scene generator, a gradient
//! fitting harness and an attention cost benchmark.

pub mod attnbench;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod losses;
pub mod matching;
pub mod metric;
pub mod raster;
pub mod synthetic;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use error::{Error, Result};
pub use geometry::{ElementClass, MapElement, PerceptionRange, PermutationGroup, Point, Scene};
pub use losses::{FocalParams, LossConfig, LossReport, LossWeights};
pub use matching::{GtSet, HierarchicalAssignment, Modeling, Prediction};
pub use metric::{ApResult, ScoredElement};
pub use raster::{BevGridSpec, Camera, Mask};
