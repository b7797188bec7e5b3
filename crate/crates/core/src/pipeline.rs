//! End-to-end segmentation: preprocessing, supervoxels, agglomeration and
//! classifier-guided resolution, with every intermediate kept so callers can
//! dump, score or resume from it.

use std::fmt;

use crate::classifier::{extract_patch_indexed, HypothesisClassifier, RegionIndex};
use crate::error::Error;
use crate::merge_forest::{agglomerate, build_region_graph, MergeForest, MergeParams};
use crate::preprocess::{preprocess, PreprocessParams};
use crate::resolver::{finalize, report, resolve, roots_only, Resolution};
use crate::volume::{normalize, LabelVolume, ScalarVolume};
use crate::watershed::watershed;

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

fn at<T>(stage: &'static str, r: crate::Result<T>) -> StageResult<T> {
    r.map_err(|source| StageError { stage, source })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub preprocess: PreprocessParams,
    pub merge: MergeParams,
}

/// Where a run starts; later stages are recomputed from the given artifacts.
#[derive(Debug, Clone, Default)]
pub struct Resume {
    pub preprocessed: Option<ScalarVolume>,
    pub supervoxels: Option<LabelVolume>,
    pub forest: Option<MergeForest>,
}

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    /// Input rescaled to `[0, 1]`; classifier patches are cut from it.
    pub normalized: ScalarVolume,
    pub preprocessed: ScalarVolume,
    pub supervoxels: LabelVolume,
    pub forest: MergeForest,
    /// Segmentation with every merge-tree root accepted.
    pub fused: LabelVolume,
    pub resolution: Resolution,
    pub labels: LabelVolume,
    pub report: String,
}

pub fn run_segment(
    input: &ScalarVolume,
    params: &SegmentParams,
    classifier: Option<&dyn HypothesisClassifier>,
    resume: Resume,
) -> StageResult<SegmentOutput> {
    at("config", params.preprocess.validate())?;
    at("config", params.merge.validate())?;
    let normalized = normalize(input);
    let preprocessed = match resume.preprocessed {
        Some(p) => {
            at("preprocess", check_same_grid(&p, input))?;
            p
        }
        None => at("preprocess", preprocess(&normalized, &params.preprocess))?,
    };
    let supervoxels = match resume.supervoxels {
        Some(s) => {
            at("watershed", s.check_aligned(input))?;
            s
        }
        None => at("watershed", watershed(&preprocessed))?,
    };
    let forest = match resume.forest {
        Some(f) => {
            at("agglomerate", f.validate())?;
            if f.leaf_count() != supervoxels.max_label() {
                return Err(StageError {
                    stage: "agglomerate",
                    source: Error::DimsMismatch(format!(
                        "forest has {} leaves but there are {} supervoxels",
                        f.leaf_count(),
                        supervoxels.max_label()
                    )),
                });
            }
            f
        }
        None => {
            let graph = at("agglomerate", build_region_graph(&supervoxels, &preprocessed))?;
            at("agglomerate", agglomerate(graph, &params.merge))?
        }
    };
    let fused = at("finalize", finalize(&roots_only(&forest), &forest, &supervoxels))?;
    let resolution = match classifier {
        None => roots_only(&forest),
        Some(c) => {
            let index = RegionIndex::new(&supervoxels);
            at(
                "resolve",
                resolve(&forest, |node| {
                    c.classify(&extract_patch_indexed(&normalized, node, &index)?)
                }),
            )?
        }
    };
    let labels = at("finalize", finalize(&resolution, &forest, &supervoxels))?;
    let report = report(&resolution, &forest);
    Ok(SegmentOutput {
        normalized,
        preprocessed,
        supervoxels,
        forest,
        fused,
        resolution,
        labels,
        report,
    })
}

fn check_same_grid(a: &ScalarVolume, b: &ScalarVolume) -> crate::Result<()> {
    if a.dims() != b.dims() || a.spacing() != b.spacing() {
        return Err(Error::DimsMismatch(
            "resumed volume does not match the input grid".into(),
        ));
    }
    Ok(())
}
