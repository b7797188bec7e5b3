//! Top-down correction of under-segmentation in a merge-forest.
//!
//! Every tree is walked from its root. A node is kept when its
//! under-segmentation probability does not strictly exceed both other
//! classes, or when it is a leaf; otherwise both children are examined in
//! its place.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::classifier::ClassProbs;
use crate::error::{Error, Result};
use crate::merge_forest::{forest_to_labels, ForestNode, MergeForest};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Accepted nodes; an exact cover of the leaves.
    pub selected: BTreeSet<u32>,
    /// Classifier output for every visited node.
    pub probs: BTreeMap<u32, ClassProbs>,
}

/// Walks each tree depth-first. `classify` is called at most once per node.
pub fn resolve<F>(forest: &MergeForest, mut classify: F) -> Result<Resolution>
where
    F: FnMut(&ForestNode) -> Result<ClassProbs>,
{
    let mut selected = BTreeSet::new();
    let mut probs = BTreeMap::new();
    for root in forest.roots() {
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            let node = forest
                .node(id)
                .ok_or_else(|| Error::Data(format!("forest has no node {id}")))?;
            let p = match probs.get(&id) {
                Some(&p) => p,
                None => {
                    let p = classify(node).map_err(|e| Error::Classifier {
                        node: id,
                        reason: e.to_string(),
                    })?;
                    probs.insert(id, p);
                    p
                }
            };
            match node.children {
                Some((a, b)) if p.under_dominates() => {
                    stack.push(b);
                    stack.push(a);
                }
                _ => {
                    selected.insert(id);
                }
            }
        }
    }
    Ok(Resolution { selected, probs })
}

/// Every root accepted, as when no classifier runs.
pub fn roots_only(forest: &MergeForest) -> Resolution {
    Resolution {
        selected: forest.roots().into_iter().collect(),
        probs: BTreeMap::new(),
    }
}

/// Final segmentation: each voxel labelled with its accepted node's id.
pub fn finalize(resolution: &Resolution, forest: &MergeForest, supervoxels: &LabelVolume) -> Result<LabelVolume> {
    forest_to_labels(forest, supervoxels, &resolution.selected)
}

/// Per root, the accepted nodes of its tree with their probabilities.
pub fn report(resolution: &Resolution, forest: &MergeForest) -> String {
    let mut s = String::from("# root: accepted node (p_under p_correct p_over)\n");
    let fmt = |p: Option<&ClassProbs>| match p {
        Some(p) => format!("({:.4} {:.4} {:.4})", p.p_under, p.p_correct, p.p_over),
        None => "(-)".to_string(),
    };
    for root in forest.roots() {
        let accepted: Vec<u32> = forest
            .subtree(root)
            .into_iter()
            .filter(|n| resolution.selected.contains(n))
            .collect();
        let _ = writeln!(
            s,
            "root {root} {} accepted {}",
            fmt(resolution.probs.get(&root)),
            accepted.len()
        );
        for n in accepted {
            let _ = writeln!(s, "  {n} {}", fmt(resolution.probs.get(&n)));
        }
    }
    s
}
