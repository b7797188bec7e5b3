//! Training-free hypothesis classifier.
//!
//! Two features are read off a hypothesis:
//!
//! * `b`, the bright fraction: the share of *interior* voxels (mask eroded
//!   by a ball of radius 2 patch voxels) brighter than
//!   `t = max(m + (s - m) / 2, m + 4 · 1.4826 · MAD)`, where `m` and `MAD`
//!   are the median and median absolute deviation of the interior and `s`
//!   is the 90th percentile of the remaining rim. A membrane running
//!   through the hypothesis shows up as bright interior voxels.
//! * `V`, the hypothesis volume in µm³.
//!
//! The class logits are
//!
//! ```text
//! under   = bright_gain · (b - bright_midpoint)
//! correct = 0
//! over    = volume_gain · ln(v_min / V)
//! ```
//!
//! and the probabilities are their softmax.

use super::{ClassProbs, Hypothesis};
use crate::error::{Error, Result};
use crate::preprocess::ball_offsets;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicClassifier {
    pub v_min: f64,
    pub v_max: f64,
    pub bright_midpoint: f64,
    pub bright_gain: f64,
    pub volume_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicFeatures {
    pub bright_fraction: f64,
    pub interior_voxels: usize,
    pub volume: f64,
}

const EROSION_RADIUS: usize = 2;

impl HeuristicClassifier {
    pub const BRIGHT_MIDPOINT: f64 = 0.03;
    pub const BRIGHT_GAIN: f64 = 150.0;
    pub const VOLUME_GAIN: f64 = 3.0;

    pub fn new(v_min: f64, v_max: f64) -> Result<Self> {
        if !(v_min > 0.0 && v_max > v_min && v_max.is_finite()) {
            return Err(Error::Param(format!(
                "heuristic needs 0 < v_min < v_max, got {v_min}, {v_max}"
            )));
        }
        Ok(HeuristicClassifier {
            v_min,
            v_max,
            bright_midpoint: Self::BRIGHT_MIDPOINT,
            bright_gain: Self::BRIGHT_GAIN,
            volume_gain: Self::VOLUME_GAIN,
        })
    }

    pub fn features(h: &Hypothesis) -> HeuristicFeatures {
        let side = h.patch.side();
        let data = h.patch.data();
        let inside: Vec<bool> = h.mask.iter().map(|&m| m >= 0.5).collect();
        let ball = ball_offsets(EROSION_RADIUS);
        let s = side as isize;
        let mut interior = Vec::new();
        let mut rim = Vec::new();
        for z in 0..s {
            for y in 0..s {
                for x in 0..s {
                    let i = ((z * s + y) * s + x) as usize;
                    if !inside[i] {
                        continue;
                    }
                    let deep = ball.iter().all(|o| {
                        let (a, b, c) = (x + o[0], y + o[1], z + o[2]);
                        a >= 0 && b >= 0 && c >= 0 && a < s && b < s && c < s && inside[((c * s + b) * s + a) as usize]
                    });
                    if deep {
                        interior.push(data[i] as f64);
                    } else {
                        rim.push(data[i] as f64);
                    }
                }
            }
        }
        let bright_fraction = if interior.is_empty() || rim.is_empty() {
            0.0
        } else {
            let median = quantile(&mut interior.clone(), 0.5);
            let mut dev: Vec<f64> = interior.iter().map(|v| (v - median).abs()).collect();
            let mad = quantile(&mut dev, 0.5);
            let rim_high = quantile(&mut rim, 0.9);
            let t = (median + (rim_high - median) / 2.0).max(median + 4.0 * 1.4826 * mad);
            interior.iter().filter(|&&v| v > t).count() as f64 / interior.len() as f64
        };
        HeuristicFeatures {
            bright_fraction,
            interior_voxels: interior.len(),
            volume: h.volume,
        }
    }

    pub fn probs_from_features(&self, f: &HeuristicFeatures) -> Result<ClassProbs> {
        let under = self.bright_gain * (f.bright_fraction - self.bright_midpoint);
        let over = self.volume_gain * (self.v_min / f.volume.max(f64::MIN_POSITIVE)).ln();
        ClassProbs::from_logits([under, 0.0, over])
    }

    pub fn classify(&self, h: &Hypothesis) -> Result<ClassProbs> {
        self.probs_from_features(&Self::features(h))
    }
}

/// Linear-interpolated quantile; reorders `v`.
fn quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
