//! Supervoxel-based segmentation of membrane-stained 3D cell images.
//!
//! The pipeline smooths and closes the input volume, over-segments it with a
//! watershed seeded at every regional minimum, agglomerates the supervoxels
//! into a merge-forest of segmentation hypotheses, and finally walks each
//! merge-tree top-down to undo merges a classifier flags as
//! under-segmentation.

pub mod classifier;
pub mod error;
pub mod eval;
pub mod merge_forest;
pub mod pipeline;
pub mod preprocess;
pub mod resolver;
pub mod synthgen;
pub mod volume;
pub mod watershed;

pub use error::{Error, Result};
