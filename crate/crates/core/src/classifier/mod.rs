//! Three-class classification of segmentation hypotheses: a small 3D
//! convolutional network and a hand-tuned heuristic that needs no training.

mod cnn;
mod dataset;
mod heuristic;
mod patch;

pub use cnn::{
    adam_step, backward, forward, forward_with, mean_loss, train, AdamState, CnnArch, CnnModel, ForwardCache,
    TrainConfig, TrainOutcome,
};
pub use dataset::{read_patch_dataset, DATASET_INDEX};
pub use heuristic::{HeuristicClassifier, HeuristicFeatures};
pub use patch::{
    extract_patch, extract_patch_indexed, extract_region_patch, extract_region_patch_sized, Hypothesis, Patch,
    RegionIndex, PATCH_MARGIN, PATCH_SIDE,
};

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatchClass {
    Under = 0,
    Correct = 1,
    Over = 2,
}

impl PatchClass {
    pub const ALL: [PatchClass; 3] = [PatchClass::Under, PatchClass::Correct, PatchClass::Over];

    pub fn name(self) -> &'static str {
        match self {
            PatchClass::Under => "under",
            PatchClass::Correct => "correct",
            PatchClass::Over => "over",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for PatchClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "under" => Ok(PatchClass::Under),
            "correct" => Ok(PatchClass::Correct),
            "over" => Ok(PatchClass::Over),
            other => Err(Error::Data(format!("unknown class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProbs {
    pub p_under: f64,
    pub p_correct: f64,
    pub p_over: f64,
}

impl ClassProbs {
    pub fn new(p_under: f64, p_correct: f64, p_over: f64) -> Result<Self> {
        let p = ClassProbs {
            p_under,
            p_correct,
            p_over,
        };
        let all = p.as_array();
        if all.iter().any(|x| !(0.0..=1.0).contains(x)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("invalid class probabilities {all:?}")));
        }
        Ok(p)
    }

    pub fn from_logits(logits: [f64; 3]) -> Result<Self> {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
        }
        let p = softmax(&logits);
        Ok(ClassProbs {
            p_under: p[0],
            p_correct: p[1],
            p_over: p[2],
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_under, self.p_correct, self.p_over]
    }

    /// Most likely class; ties go to the earlier class.
    pub fn argmax(&self) -> PatchClass {
        let a = self.as_array();
        let mut best = 0;
        for k in 1..3 {
            if a[k] > a[best] {
                best = k;
            }
        }
        PatchClass::ALL[best]
    }

    /// Strictly more likely under-segmented than either alternative.
    pub fn under_dominates(&self) -> bool {
        self.p_under > self.p_correct.max(self.p_over)
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Anything that can score a hypothesis. Implementations must be pure.
pub trait HypothesisClassifier: Sync {
    fn classify(&self, h: &Hypothesis) -> Result<ClassProbs>;
}

impl HypothesisClassifier for CnnModel {
    fn classify(&self, h: &Hypothesis) -> Result<ClassProbs> {
        let input = if self.masked_input {
            h.masked_patch()
        } else {
            h.patch.clone()
        };
        forward(self, &input)
    }
}

impl HypothesisClassifier for HeuristicClassifier {
    fn classify(&self, h: &Hypothesis) -> Result<ClassProbs> {
        HeuristicClassifier::classify(self, h)
    }
}
