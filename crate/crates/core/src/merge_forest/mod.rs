//! Supervoxel agglomeration into a merge-forest.
//!
//! Edges between adjacent regions are scored by combining normalized edge
//! features (each in `[0, 1]`, where 1 means "keep the boundary"). The lowest
//! scoring edge is merged first; merging stops once every remaining edge
//! scores 1 or would exceed the maximum volume.

mod agglomerate;
mod features;
mod forest;
mod graph;

pub use agglomerate::{agglomerate, Agglomeration, MergeEvent, MergeQueueEntry};
pub use features::{
    feature_boundary, feature_sort, feature_v_min, sort_score, BoundaryContrast, EdgeFeature, MinimumVolume,
};
pub use forest::{forest_to_labels, ForestNode, MergeForest};
pub use graph::{build_region_graph, BoundaryStats, RegionGraph, RegionStats};

use crate::error::{Error, Result};

/// Volume of a sphere of radius `r_min`: the smallest expected cell.
pub fn v_min_from_radius(r_min: f64) -> Result<f64> {
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(Error::Param(format!("minimum radius must be positive, got {r_min}")));
    }
    Ok(4.0 / 3.0 * std::f64::consts::PI * r_min.powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeParams {
    /// Smallest object radius in µm, when `v_min` was derived from it.
    pub r_min: Option<f64>,
    /// Minimum cell volume in µm³.
    pub v_min: f64,
    /// Maximum volume of any merged hypothesis in µm³.
    pub v_max: f64,
    /// Denominators below this make the boundary feature fall back to 1.
    pub epsilon_div: f64,
}

impl MergeParams {
    pub const DEFAULT_EPSILON_DIV: f64 = 1e-6;

    pub fn new(v_min: f64, v_max: f64) -> Result<Self> {
        let p = MergeParams {
            r_min: None,
            v_min,
            v_max,
            epsilon_div: Self::DEFAULT_EPSILON_DIV,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_radius(r_min: f64, v_max: f64) -> Result<Self> {
        let mut p = Self::new(v_min_from_radius(r_min)?, v_max)?;
        p.r_min = Some(r_min);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min.is_finite() && self.v_min > 0.0) {
            return Err(Error::Param(format!("v_min must be positive, got {}", self.v_min)));
        }
        if !(self.v_max.is_finite() && self.v_max > self.v_min) {
            return Err(Error::Param(format!(
                "v_max ({}) must exceed v_min ({})",
                self.v_max, self.v_min
            )));
        }
        if !(self.epsilon_div.is_finite() && self.epsilon_div > 0.0) {
            return Err(Error::Param("epsilon_div must be positive".into()));
        }
        Ok(())
    }
}
