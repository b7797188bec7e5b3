use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::features::feature_sort;
use super::forest::MergeForest;
use super::{MergeParams, RegionGraph};
use crate::error::{Error, Result};

/// Lazily invalidated merge-queue entry. `versions` snapshot the endpoints'
/// generation counters at push time; a mismatch on pop marks it stale.
#[derive(Debug, Clone, Copy)]
pub struct MergeQueueEntry {
    pub score: f64,
    /// Edge key with `edge.0 < edge.1`.
    pub edge: (u32, u32),
    pub versions: (u32, u32),
}

impl PartialEq for MergeQueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for MergeQueueEntry {}

impl PartialOrd for MergeQueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MergeQueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.edge.cmp(&other.edge))
            .then(self.versions.cmp(&other.versions))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent {
    pub a: u32,
    pub b: u32,
    pub merged: u32,
    pub score: f64,
}

/// Step-wise agglomeration state. [`Agglomeration::step`] performs one merge,
/// which lets callers inspect the graph between merges.
#[derive(Debug, Clone)]
pub struct Agglomeration {
    graph: RegionGraph,
    params: MergeParams,
    forest: MergeForest,
    queue: BinaryHeap<Reverse<MergeQueueEntry>>,
    versions: Vec<u32>,
    done: bool,
}

impl Agglomeration {
    /// Requires the graph's region ids to be exactly `1..=K`.
    pub fn new(graph: RegionGraph, params: MergeParams) -> Result<Self> {
        params.validate()?;
        let ids: Vec<u32> = graph.alive().collect();
        if ids.iter().enumerate().any(|(k, &id)| id != k as u32 + 1) {
            return Err(Error::Param(
                "agglomeration requires contiguous region ids 1..=K".into(),
            ));
        }
        let forest = MergeForest::from_leaves(ids.iter().map(|&id| *graph.region(id).expect("alive")).collect());
        let mut agg = Agglomeration {
            versions: vec![0; ids.len() + 1],
            graph,
            params,
            forest,
            queue: BinaryHeap::new(),
            done: false,
        };
        let edges: Vec<(u32, u32)> = agg.graph.edges().map(|(i, j, _)| (i, j)).collect();
        for (i, j) in edges {
            agg.push(i, j)?;
        }
        Ok(agg)
    }

    pub fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    pub fn forest(&self) -> &MergeForest {
        &self.forest
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    fn push(&mut self, i: u32, j: u32) -> Result<()> {
        let (a, b) = (i.min(j), i.max(j));
        let score = feature_sort(a, b, &self.graph, &self.params)?;
        self.queue.push(Reverse(MergeQueueEntry {
            score,
            edge: (a, b),
            versions: (self.versions[a as usize], self.versions[b as usize]),
        }));
        Ok(())
    }

    fn is_stale(&self, e: &MergeQueueEntry) -> bool {
        let (a, b) = e.edge;
        !self.graph.is_alive(a)
            || !self.graph.is_alive(b)
            || self.versions[a as usize] != e.versions.0
            || self.versions[b as usize] != e.versions.1
    }

    /// Performs the next merge, or returns `None` once no valid merge remains.
    pub fn step(&mut self) -> Result<Option<MergeEvent>> {
        while !self.done {
            let Some(Reverse(entry)) = self.queue.pop() else {
                self.done = true;
                break;
            };
            if self.is_stale(&entry) {
                continue;
            }
            let (a, b) = entry.edge;
            let score = feature_sort(a, b, &self.graph, &self.params)?;
            if score > entry.score {
                let head = self.queue.peek().map(|Reverse(h)| h.score);
                if head.is_some_and(|h| score > h) {
                    self.queue.push(Reverse(MergeQueueEntry { score, ..entry }));
                    continue;
                }
            }
            if score >= 1.0 {
                // Min-heap: every other live entry scores at least this much.
                self.done = true;
                break;
            }
            let va = self.graph.region(a).expect("alive").volume;
            let vb = self.graph.region(b).expect("alive").volume;
            if va + vb > self.params.v_max {
                continue;
            }

            let merged = self.forest.push_merge(a, b, score, self.graph.voxel_volume());
            self.graph.merge(a, b, merged)?;
            self.versions[a as usize] += 1;
            self.versions[b as usize] += 1;
            debug_assert_eq!(self.versions.len(), merged as usize);
            self.versions.push(0);
            let neighbors: Vec<u32> = self.graph.neighbors(merged).map(|(k, _)| k).collect();
            for k in neighbors {
                self.push(merged, k)?;
            }
            return Ok(Some(MergeEvent { a, b, merged, score }));
        }
        Ok(None)
    }

    pub fn run(mut self) -> Result<MergeForest> {
        while self.step()?.is_some() {}
        Ok(self.forest)
    }

    pub fn into_parts(self) -> (RegionGraph, MergeForest) {
        (self.graph, self.forest)
    }
}

/// Greedy agglomeration of the whole graph into a merge-forest.
pub fn agglomerate(graph: RegionGraph, params: &MergeParams) -> Result<MergeForest> {
    Agglomeration::new(graph, *params)?.run()
}
