use super::{MergeParams, RegionGraph};
use crate::error::{Error, Result};

/// A normalized edge feature: 1 keeps the boundary, values near 0 favor a merge.
pub trait EdgeFeature {
    fn name(&self) -> &'static str;
    fn evaluate(&self, graph: &RegionGraph, i: u32, j: u32, params: &MergeParams) -> Result<f64>;
}

/// Fires while the smaller region is below the minimum cell volume, weighted
/// by the shared boundary intensity so dark boundaries collapse first.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinimumVolume;

/// Fires when the shared boundary looks like cell interior rather than like
/// the bright wall around the fused region.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundaryContrast;

impl MinimumVolume {
    pub fn score(min_volume: f64, v_min: f64, mu_cmn: f64) -> f64 {
        let base = (min_volume / v_min).clamp(0.0, 1.0);
        if base < 1.0 {
            base * mu_cmn
        } else {
            1.0
        }
    }
}

impl BoundaryContrast {
    /// `mu_bdry` is `None` when the fused region has no boundary pairs with
    /// any other region.
    pub fn score(mu_cmn: f64, mu_total: f64, mu_bdry: Option<f64>, epsilon_div: f64) -> f64 {
        let Some(mu_bdry) = mu_bdry else {
            return 1.0;
        };
        let den = (mu_cmn - mu_bdry).abs();
        if den < epsilon_div {
            return 1.0;
        }
        ((mu_cmn - mu_total).abs() / den).min(1.0)
    }
}

impl EdgeFeature for MinimumVolume {
    fn name(&self) -> &'static str {
        "v_min"
    }

    fn evaluate(&self, graph: &RegionGraph, i: u32, j: u32, params: &MergeParams) -> Result<f64> {
        let e = graph.edge(i, j).ok_or(Error::MissingEdge(i, j))?;
        let vi = graph.region(i).expect("edge endpoints are alive").volume;
        let vj = graph.region(j).expect("edge endpoints are alive").volume;
        Ok(Self::score(vi.min(vj), params.v_min, e.mean()))
    }
}

impl EdgeFeature for BoundaryContrast {
    fn name(&self) -> &'static str {
        "boundary"
    }

    fn evaluate(&self, graph: &RegionGraph, i: u32, j: u32, params: &MergeParams) -> Result<f64> {
        let e = graph.edge(i, j).ok_or(Error::MissingEdge(i, j))?;
        let ri = graph.region(i).expect("edge endpoints are alive");
        let rj = graph.region(j).expect("edge endpoints are alive");
        let mu_total = (ri.intensity_sum + rj.intensity_sum) / (ri.voxel_count + rj.voxel_count) as f64;

        let bi = graph.external_boundary(i).expect("alive");
        let bj = graph.external_boundary(j).expect("alive");
        // The shared boundary is counted once in each endpoint's total.
        let count = bi.pair_count + bj.pair_count - 2 * e.pair_count;
        let mu_bdry = (count > 0).then(|| {
            let sum = (bi.pair_intensity_sum - e.pair_intensity_sum) + (bj.pair_intensity_sum - e.pair_intensity_sum);
            sum / count as f64
        });
        Ok(Self::score(e.mean(), mu_total, mu_bdry, params.epsilon_div))
    }
}

/// Euclidean norm of the feature vector divided by the square root of its length.
pub fn sort_score(features: &[f64]) -> f64 {
    if features.is_empty() {
        return 1.0;
    }
    let norm = features.iter().map(|f| f * f).sum::<f64>().sqrt();
    norm / (features.len() as f64).sqrt()
}

pub fn feature_v_min(i: u32, j: u32, graph: &RegionGraph, params: &MergeParams) -> Result<f64> {
    MinimumVolume.evaluate(graph, i, j, params)
}

pub fn feature_boundary(i: u32, j: u32, graph: &RegionGraph, params: &MergeParams) -> Result<f64> {
    BoundaryContrast.evaluate(graph, i, j, params)
}

pub fn feature_sort(i: u32, j: u32, graph: &RegionGraph, params: &MergeParams) -> Result<f64> {
    let f1 = feature_v_min(i, j, graph, params)?;
    let f2 = feature_boundary(i, j, graph, params)?;
    Ok(sort_score(&[f1, f2]))
}
