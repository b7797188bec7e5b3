use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::volume::{for_each_face_pair, LabelVolume, ScalarVolume};

/// Size and intensity totals of one region.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegionStats {
    pub voxel_count: u64,
    /// Physical volume in µm³ (`voxel_count` times the voxel volume).
    pub volume: f64,
    /// Sum of preprocessed intensities over the region.
    pub intensity_sum: f64,
}

impl RegionStats {
    pub fn mean_intensity(&self) -> f64 {
        if self.voxel_count == 0 {
            0.0
        } else {
            self.intensity_sum / self.voxel_count as f64
        }
    }

    pub(crate) fn fuse(&self, other: &RegionStats, voxel_volume: f64) -> RegionStats {
        let voxel_count = self.voxel_count + other.voxel_count;
        RegionStats {
            voxel_count,
            volume: voxel_count as f64 * voxel_volume,
            intensity_sum: self.intensity_sum + other.intensity_sum,
        }
    }
}

/// Statistics of the face-adjacent voxel pairs straddling two regions. A
/// pair contributes the mean of its two voxel intensities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryStats {
    pub pair_count: u64,
    pub pair_intensity_sum: f64,
}

impl BoundaryStats {
    pub fn mean(&self) -> f64 {
        if self.pair_count == 0 {
            0.0
        } else {
            self.pair_intensity_sum / self.pair_count as f64
        }
    }

    fn add(&mut self, other: &BoundaryStats) {
        self.pair_count += other.pair_count;
        self.pair_intensity_sum += other.pair_intensity_sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GraphNode {
    pub(crate) stats: RegionStats,
    pub(crate) adjacency: BTreeMap<u32, BoundaryStats>,
    /// Sum over `adjacency`; the node's boundary towards all other regions.
    pub(crate) external: BoundaryStats,
}

/// Region adjacency graph over the alive regions. Edges are stored in both
/// endpoints' adjacency maps, so `(i, j)` and `(j, i)` resolve identically.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    voxel_volume: f64,
    total_voxels: u64,
    /// Indexed by region id; `None` for ids that are unused or merged away.
    nodes: Vec<Option<GraphNode>>,
}

/// One scan over all 6-adjacent voxel pairs.
///
/// Labels must be positive. Ids need not be contiguous for the graph itself,
/// but [`super::agglomerate`] requires `1..=K`.
pub fn build_region_graph(lv: &LabelVolume, v: &ScalarVolume) -> Result<RegionGraph> {
    lv.check_aligned(v)?;
    let labels = lv.labels();
    let data = v.data();
    if labels.contains(&0) {
        return Err(Error::Param(
            "region graph requires every voxel to carry a positive label".into(),
        ));
    }
    let max = lv.max_label() as usize;
    let mut stats = vec![RegionStats::default(); max + 1];
    let voxel_volume = lv.spacing().voxel_volume();
    for (&l, &x) in labels.iter().zip(data) {
        let s = &mut stats[l as usize];
        s.voxel_count += 1;
        s.intensity_sum += x as f64;
    }

    let mut edges: BTreeMap<(u32, u32), BoundaryStats> = BTreeMap::new();
    for_each_face_pair(lv.dims(), |a, b| {
        let (la, lb) = (labels[a], labels[b]);
        if la != lb {
            let key = (la.min(lb), la.max(lb));
            let e = edges.entry(key).or_default();
            e.pair_count += 1;
            e.pair_intensity_sum += 0.5 * (data[a] as f64 + data[b] as f64);
        }
    });

    let mut nodes: Vec<Option<GraphNode>> = stats
        .into_iter()
        .map(|mut s| {
            (s.voxel_count > 0).then(|| {
                s.volume = s.voxel_count as f64 * voxel_volume;
                GraphNode {
                    stats: s,
                    adjacency: BTreeMap::new(),
                    external: BoundaryStats::default(),
                }
            })
        })
        .collect();
    for ((a, b), e) in edges {
        for (from, to) in [(a, b), (b, a)] {
            let node = nodes[from as usize].as_mut().expect("labelled region");
            node.adjacency.insert(to, e);
            node.external.add(&e);
        }
    }
    Ok(RegionGraph {
        voxel_volume,
        total_voxels: labels.len() as u64,
        nodes,
    })
}

impl RegionGraph {
    pub fn voxel_volume(&self) -> f64 {
        self.voxel_volume
    }

    pub fn total_voxels(&self) -> u64 {
        self.total_voxels
    }

    pub(crate) fn node(&self, id: u32) -> Option<&GraphNode> {
        self.nodes.get(id as usize).and_then(|n| n.as_ref())
    }

    pub fn is_alive(&self, id: u32) -> bool {
        self.node(id).is_some()
    }

    /// Alive region ids in ascending order.
    pub fn alive(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|_| i as u32))
    }

    pub fn alive_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    pub fn region(&self, id: u32) -> Option<&RegionStats> {
        self.node(id).map(|n| &n.stats)
    }

    pub fn edge(&self, i: u32, j: u32) -> Option<&BoundaryStats> {
        self.node(i).and_then(|n| n.adjacency.get(&j))
    }

    /// Boundary of `id` towards every other alive region (image border excluded).
    pub fn external_boundary(&self, id: u32) -> Option<&BoundaryStats> {
        self.node(id).map(|n| &n.external)
    }

    pub fn neighbors(&self, id: u32) -> impl Iterator<Item = (u32, &BoundaryStats)> + '_ {
        self.node(id)
            .into_iter()
            .flat_map(|n| n.adjacency.iter().map(|(&k, e)| (k, e)))
    }

    /// Every edge once, as `(i, j, stats)` with `i < j`, in key order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, &BoundaryStats)> + '_ {
        self.alive().flat_map(move |i| {
            self.neighbors(i)
                .filter(move |(j, _)| *j > i)
                .map(move |(j, e)| (i, j, e))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Fuses alive regions `i` and `j` into the new region `new_id`.
    pub(crate) fn merge(&mut self, i: u32, j: u32, new_id: u32) -> Result<()> {
        if self.edge(i, j).is_none() {
            return Err(Error::MissingEdge(i, j));
        }
        if (new_id as usize) < self.nodes.len() && self.nodes[new_id as usize].is_some() {
            return Err(Error::Param(format!("region id {new_id} already in use")));
        }
        let a = self.nodes[i as usize].take().expect("checked alive");
        let b = self.nodes[j as usize].take().expect("checked alive");
        let stats = a.stats.fuse(&b.stats, self.voxel_volume);

        let mut adjacency = a.adjacency;
        adjacency.remove(&j);
        for (k, e) in b.adjacency {
            if k != i {
                adjacency.entry(k).or_default().add(&e);
            }
        }
        let mut external = BoundaryStats::default();
        for (&k, e) in &adjacency {
            external.add(e);
            let neighbor = self.nodes[k as usize].as_mut().expect("edges join alive regions");
            neighbor.adjacency.remove(&i);
            neighbor.adjacency.remove(&j);
            neighbor.adjacency.insert(new_id, *e);
        }

        if self.nodes.len() <= new_id as usize {
            self.nodes.resize(new_id as usize + 1, None);
        }
        self.nodes[new_id as usize] = Some(GraphNode {
            stats,
            adjacency,
            external,
        });
        Ok(())
    }
}
