//! Cell-level precision, recall and F-score against a ground-truth labeling.
//!
//! A predicted segment is a true positive when its IoU with some truth cell
//! exceeds 0.5. Two segments cannot both exceed 0.5 IoU with the same cell
//! (nor one segment with two cells), so the matching is one-to-one without
//! any assignment step.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Match {
    pub predicted: u32,
    pub truth: u32,
    pub intersection: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub matches: Vec<Match>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl MatchReport {
    pub fn from_counts(matches: Vec<Match>, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MatchReport {
            matches,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_score,
        }
    }
}

fn check_dims(pred: &LabelVolume, truth: &LabelVolume) -> Result<()> {
    if pred.dims() != truth.dims() {
        return Err(Error::DimsMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.dims().as_array(),
            truth.dims().as_array()
        )));
    }
    Ok(())
}

/// Matches over the voxels accepted by `keep`; predicted label 0 is treated
/// as unsegmented and never counts as a segment.
fn match_where(pred: &LabelVolume, truth: &LabelVolume, keep: impl Fn(usize, u32) -> bool) -> MatchReport {
    let mut pred_size: HashMap<u32, u64> = HashMap::new();
    let mut truth_size: HashMap<u32, u64> = HashMap::new();
    let mut table: HashMap<(u32, u32), u64> = HashMap::new();
    for (i, (&p, &t)) in pred.labels().iter().zip(truth.labels()).enumerate() {
        if !keep(i, t) {
            continue;
        }
        *truth_size.entry(t).or_default() += 1;
        if p != 0 {
            *pred_size.entry(p).or_default() += 1;
            *table.entry((p, t)).or_default() += 1;
        }
    }
    let mut matches: Vec<Match> = table
        .iter()
        .filter_map(|(&(p, t), &inter)| {
            let union = pred_size[&p] + truth_size[&t] - inter;
            let iou = inter as f64 / union as f64;
            (iou > 0.5).then_some(Match {
                predicted: p,
                truth: t,
                intersection: inter,
                iou,
            })
        })
        .collect();
    matches.sort_by_key(|m| (m.predicted, m.truth));
    let tp = matches.len();
    MatchReport::from_counts(matches, tp, pred_size.len() - tp, truth_size.len() - tp)
}

/// Cell-level matching. Truth voxels labelled 0 or listed in
/// `background_truth_labels` are excluded from every count.
pub fn match_segments(
    pred: &LabelVolume,
    truth: &LabelVolume,
    background_truth_labels: &BTreeSet<u32>,
) -> Result<MatchReport> {
    check_dims(pred, truth)?;
    Ok(match_where(pred, truth, |_, t| {
        t != 0 && !background_truth_labels.contains(&t)
    }))
}

/// Per-layer reports. Each truth cell belongs to the layer that `layer_mask`
/// assigns to the majority of its voxels; layer 0 in the mask is ignored.
/// Predicted segments are scored only on the voxels of the layer's cells.
pub fn layer_report(
    pred: &LabelVolume,
    truth: &LabelVolume,
    layer_mask: &LabelVolume,
    background_truth_labels: &BTreeSet<u32>,
) -> Result<Vec<(u32, MatchReport)>> {
    check_dims(pred, truth)?;
    check_dims(layer_mask, truth)?;
    let mut votes: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
    for (&t, &layer) in truth.labels().iter().zip(layer_mask.labels()) {
        if t != 0 && layer != 0 && !background_truth_labels.contains(&t) {
            *votes.entry(t).or_default().entry(layer).or_default() += 1;
        }
    }
    let cell_layer: HashMap<u32, u32> = votes
        .into_iter()
        .map(|(t, v)| {
            let layer = v
                .into_iter()
                .max_by_key(|&(layer, n)| (n, std::cmp::Reverse(layer)))
                .map(|(layer, _)| layer)
                .expect("non-empty votes");
            (t, layer)
        })
        .collect();
    let mut layers: BTreeSet<u32> = layer_mask.labels().iter().copied().filter(|&l| l != 0).collect();
    layers.extend(cell_layer.values().copied());
    Ok(layers
        .into_iter()
        .map(|layer| {
            let report = match_where(pred, truth, |_, t| cell_layer.get(&t) == Some(&layer));
            (layer, report)
        })
        .collect())
}

/// Plain-text table with the columns Algorithm, Precision, Recall, F-Score.
pub fn format_table(rows: &[(String, MatchReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(9);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>9}  {:>9}  {:>9}",
        "Algorithm", "Precision", "Recall", "F-Score"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}",
            name, r.precision, r.recall, r.f_score
        );
    }
    s
}

#[derive(Serialize)]
struct JsonReport<'a> {
    algorithm: &'a str,
    precision: f64,
    recall: f64,
    f_score: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
}

/// One JSON object per evaluation, newline-terminated.
pub fn format_json(name: &str, r: &MatchReport) -> String {
    let j = JsonReport {
        algorithm: name,
        precision: r.precision,
        recall: r.recall,
        f_score: r.f_score,
        tp: r.tp,
        fp: r.fp,
        fn_: r.fn_,
    };
    serde_json::to_string(&j).expect("report serializes") + "\n"
}
