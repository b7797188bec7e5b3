use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use super::RegionStats;
use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// `(id, children, voxel_count, volume, merge_score)` as parsed from text.
type NodeRow = (u32, Option<(u32, u32)>, u64, f64, Option<f64>);

/// One segmentation hypothesis. Leaves are the initial supervoxels and keep
/// their supervoxel label as id; merged nodes are numbered from `K + 1` in
/// merge order.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestNode {
    pub id: u32,
    /// Supervoxel labels covered, ascending.
    pub regions: Vec<u32>,
    pub voxel_count: u64,
    pub volume: f64,
    pub children: Option<(u32, u32)>,
    pub parent: Option<u32>,
    /// Sort score of the merged edge; `None` for leaves.
    pub merge_score: Option<f64>,
}

impl ForestNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeForest {
    /// `nodes[k]` has id `k + 1`.
    nodes: Vec<ForestNode>,
    leaf_count: u32,
}

impl MergeForest {
    pub(crate) fn from_leaves(stats: Vec<RegionStats>) -> Self {
        let nodes: Vec<ForestNode> = stats
            .into_iter()
            .enumerate()
            .map(|(k, s)| ForestNode {
                id: k as u32 + 1,
                regions: vec![k as u32 + 1],
                voxel_count: s.voxel_count,
                volume: s.volume,
                children: None,
                parent: None,
                merge_score: None,
            })
            .collect();
        MergeForest {
            leaf_count: nodes.len() as u32,
            nodes,
        }
    }

    pub(crate) fn push_merge(&mut self, a: u32, b: u32, score: f64, voxel_volume: f64) -> u32 {
        let id = self.nodes.len() as u32 + 1;
        let (na, nb) = (&self.nodes[a as usize - 1], &self.nodes[b as usize - 1]);
        let mut regions = na.regions.clone();
        regions.extend_from_slice(&nb.regions);
        regions.sort_unstable();
        let voxel_count = na.voxel_count + nb.voxel_count;
        self.nodes.push(ForestNode {
            id,
            regions,
            voxel_count,
            volume: voxel_count as f64 * voxel_volume,
            children: Some((a, b)),
            parent: None,
            merge_score: Some(score),
        });
        self.nodes[a as usize - 1].parent = Some(id);
        self.nodes[b as usize - 1].parent = Some(id);
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> u32 {
        self.leaf_count
    }

    pub fn nodes(&self) -> &[ForestNode] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> Option<&ForestNode> {
        id.checked_sub(1).and_then(|k| self.nodes.get(k as usize))
    }

    /// Nodes without a parent, ascending by id.
    pub fn roots(&self) -> Vec<u32> {
        self.nodes.iter().filter(|n| n.parent.is_none()).map(|n| n.id).collect()
    }

    pub fn leaves(&self) -> Vec<u32> {
        (1..=self.leaf_count).collect()
    }

    /// Every node in the subtree rooted at `id`, parents before children.
    pub fn subtree(&self, id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            if let Some((a, b)) = self.node(n).and_then(|n| n.children) {
                stack.push(b);
                stack.push(a);
            }
        }
        out
    }

    /// Checks the structural invariants: binary nodes, additive voxel counts,
    /// consistent parent links, and leaves equal to the supervoxels.
    pub fn validate(&self) -> Result<()> {
        for (k, n) in self.nodes.iter().enumerate() {
            let bad = |msg: &str| Err(Error::Data(format!("forest node {}: {msg}", n.id)));
            if n.id != k as u32 + 1 {
                return bad("id does not match position");
            }
            match n.children {
                None if n.id > self.leaf_count => return bad("internal node without children"),
                Some(_) if n.id <= self.leaf_count => return bad("leaf with children"),
                Some((a, b)) => {
                    let (Some(ca), Some(cb)) = (self.node(a), self.node(b)) else {
                        return bad("unknown child");
                    };
                    if a >= n.id || b >= n.id || a == b {
                        return bad("children must precede their parent");
                    }
                    if ca.parent != Some(n.id) || cb.parent != Some(n.id) {
                        return bad("child parent link mismatch");
                    }
                    if ca.voxel_count + cb.voxel_count != n.voxel_count {
                        return bad("voxel count is not the sum of its children");
                    }
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Plain-text serialization. See the repository README for the format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# svseg merge-forest v1\n");
        s.push_str("[nodes]\n");
        s.push_str("# node_id,child_a,child_b,voxel_count,volume_um3,merge_score\n");
        for n in &self.nodes {
            let (a, b) = match n.children {
                Some((a, b)) => (a.to_string(), b.to_string()),
                None => ("-".into(), "-".into()),
            };
            let score = n.merge_score.map_or_else(|| "-".to_string(), |x| x.to_string());
            let _ = writeln!(s, "{},{},{},{},{},{}", n.id, a, b, n.voxel_count, n.volume, score);
        }
        s.push_str("[leaves]\n");
        s.push_str("# leaf_node_id,supervoxel_label\n");
        for n in &self.nodes[..self.leaf_count as usize] {
            let _ = writeln!(s, "{},{}", n.id, n.regions[0]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Data(format!("forest line {}: {msg}", line + 1));
        let mut section = "";
        let mut rows: Vec<NodeRow> = Vec::new();
        let mut leaves: Vec<(u32, u32)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                section = match line {
                    "[nodes]" => "nodes",
                    "[leaves]" => "leaves",
                    _ => return Err(err(ln, "unknown section")),
                };
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let int = |s: &str| s.parse::<u64>().map_err(|_| err(ln, "bad integer"));
            match section {
                "nodes" => {
                    if f.len() != 6 {
                        return Err(err(ln, "expected 6 fields"));
                    }
                    let children = match (f[1], f[2]) {
                        ("-", "-") => None,
                        (a, b) => Some((int(a)? as u32, int(b)? as u32)),
                    };
                    let volume = f[4].parse::<f64>().map_err(|_| err(ln, "bad volume"))?;
                    let score = match f[5] {
                        "-" => None,
                        s => Some(s.parse::<f64>().map_err(|_| err(ln, "bad score"))?),
                    };
                    rows.push((int(f[0])? as u32, children, int(f[3])?, volume, score));
                }
                "leaves" => {
                    if f.len() != 2 {
                        return Err(err(ln, "expected 2 fields"));
                    }
                    leaves.push((int(f[0])? as u32, int(f[1])? as u32));
                }
                _ => return Err(err(ln, "record outside a section")),
            }
        }

        let leaf_count = rows.iter().filter(|r| r.1.is_none()).count() as u32;
        if leaves.len() as u32 != leaf_count || leaves.iter().any(|(n, l)| n != l) {
            return Err(Error::Unsupported(
                "leaf table must map each leaf node to the supervoxel label of the same id".into(),
            ));
        }
        let mut forest = MergeForest {
            nodes: Vec::with_capacity(rows.len()),
            leaf_count,
        };
        for (k, (id, children, voxel_count, volume, score)) in rows.into_iter().enumerate() {
            if id != k as u32 + 1 {
                return Err(Error::Data(format!(
                    "forest node ids must be 1..N in order, found {id}"
                )));
            }
            let regions = match children {
                None => vec![id],
                Some((a, b)) => {
                    let (Some(ca), Some(cb)) = (forest.node(a), forest.node(b)) else {
                        return Err(Error::Data(format!("node {id} references a later child")));
                    };
                    let mut r = ca.regions.clone();
                    r.extend_from_slice(&cb.regions);
                    r.sort_unstable();
                    r
                }
            };
            if let Some((a, b)) = children {
                for c in [a, b] {
                    let child = &mut forest.nodes[c as usize - 1];
                    if child.parent.is_some() {
                        return Err(Error::Data(format!("node {c} has two parents")));
                    }
                    child.parent = Some(id);
                }
            }
            forest.nodes.push(ForestNode {
                id,
                regions,
                voxel_count,
                volume,
                children,
                parent: None,
                merge_score: score,
            });
        }
        forest.validate()?;
        Ok(forest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// For every leaf, the selected node covering it. Fails unless the
    /// selection covers each leaf exactly once.
    pub fn cover_map(&self, selection: &BTreeSet<u32>) -> Result<Vec<u32>> {
        let mut owner = vec![0u32; self.leaf_count as usize + 1];
        for &id in selection {
            let node = self
                .node(id)
                .ok_or_else(|| Error::ExactCover(format!("unknown node {id}")))?;
            for &leaf in &node.regions {
                let slot = &mut owner[leaf as usize];
                if *slot != 0 {
                    return Err(Error::ExactCover(format!(
                        "supervoxel {leaf} covered by both {} and {id}",
                        *slot
                    )));
                }
                *slot = id;
            }
        }
        if let Some(leaf) = (1..owner.len()).find(|&l| owner[l] == 0) {
            return Err(Error::ExactCover(format!("supervoxel {leaf} is not covered")));
        }
        Ok(owner)
    }
}

/// Materializes a hypothesis selection: each voxel receives the id of the
/// selected node covering its supervoxel. Background (0) stays 0.
pub fn forest_to_labels(
    forest: &MergeForest,
    supervoxels: &LabelVolume,
    selection: &BTreeSet<u32>,
) -> Result<LabelVolume> {
    let owner = forest.cover_map(selection)?;
    let labels = supervoxels
        .labels()
        .iter()
        .map(|&l| match l {
            0 => Ok(0),
            l if (l as usize) < owner.len() => Ok(owner[l as usize]),
            l => Err(Error::DimsMismatch(format!(
                "supervoxel label {l} is not a forest leaf"
            ))),
        })
        .collect::<Result<Vec<u32>>>()?;
    LabelVolume::new(supervoxels.dims(), supervoxels.spacing(), labels)
}
