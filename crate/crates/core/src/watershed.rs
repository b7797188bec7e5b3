//! Seeded priority-flood watershed initialized with every regional minimum.
//!
//! Minima are maximal 26-connected constant-value plateaus without a strictly
//! lower 26-neighbor. Flooding uses 6-connectivity, assigns every voxel a
//! label (no watershed lines) and pops equal priorities in insertion order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::volume::{for_each_face_neighbor, Dims, LabelVolume, ScalarVolume, VoxelIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct MinimumComponent {
    /// Member voxels in x-fastest scan order.
    pub voxels: Vec<VoxelIndex>,
    pub value: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinimaSet {
    pub components: Vec<MinimumComponent>,
}

impl MinimaSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

fn for_each_box_neighbor(dims: Dims, idx: usize, mut f: impl FnMut(usize)) {
    let p = dims.coords(idx);
    let lo = |c: usize| c.saturating_sub(1);
    for z in lo(p.z)..=(p.z + 1).min(dims.z - 1) {
        for y in lo(p.y)..=(p.y + 1).min(dims.y - 1) {
            for x in lo(p.x)..=(p.x + 1).min(dims.x - 1) {
                let n = dims.index(x, y, z);
                if n != idx {
                    f(n);
                }
            }
        }
    }
}

/// All regional minima, ordered by the scan position of their first voxel.
pub fn find_local_minima(v: &ScalarVolume) -> MinimaSet {
    let dims = v.dims();
    let data = v.data();
    let mut visited = vec![false; data.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..data.len() {
        if visited[start] {
            continue;
        }
        let value = data[start];
        let mut members = vec![start];
        let mut is_minimum = true;
        visited[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            for_each_box_neighbor(dims, idx, |n| {
                let nv = data[n];
                if nv < value {
                    is_minimum = false;
                } else if nv == value && !visited[n] {
                    visited[n] = true;
                    members.push(n);
                    queue.push_back(n);
                }
            });
        }
        if is_minimum {
            members.sort_unstable();
            components.push(MinimumComponent {
                voxels: members.into_iter().map(|i| dims.coords(i)).collect(),
                value,
            });
        }
    }
    MinimaSet { components }
}

#[derive(Debug, Clone, Copy)]
struct FloodEntry {
    level: f32,
    seq: u64,
    idx: usize,
}

impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FloodEntry {}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.level.total_cmp(&other.level).then(self.seq.cmp(&other.seq))
    }
}

/// Floods from the seed components; component `k` receives label `k + 1`.
///
/// A voxel takes the label of the region whose popped voxel first reaches it,
/// and enters the queue at `max(current level, own intensity)`.
pub fn seeded_watershed(v: &ScalarVolume, seeds: &MinimaSet) -> Result<LabelVolume> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let dims = v.dims();
    let data = v.data();
    let mut labels = vec![0u32; data.len()];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;

    for (k, comp) in seeds.components.iter().enumerate() {
        let label = k as u32 + 1;
        for p in &comp.voxels {
            if !dims.contains(*p) {
                return Err(Error::Param(format!("seed voxel {p:?} outside volume")));
            }
            let idx = dims.index(p.x, p.y, p.z);
            if labels[idx] != 0 {
                return Err(Error::Param(format!("seed voxel {p:?} belongs to two components")));
            }
            labels[idx] = label;
            heap.push(Reverse(FloodEntry {
                level: data[idx],
                seq,
                idx,
            }));
            seq += 1;
        }
    }

    while let Some(Reverse(entry)) = heap.pop() {
        let label = labels[entry.idx];
        for_each_face_neighbor(dims, entry.idx, |n| {
            if labels[n] == 0 {
                labels[n] = label;
                heap.push(Reverse(FloodEntry {
                    level: data[n].max(entry.level),
                    seq,
                    idx: n,
                }));
                seq += 1;
            }
        });
    }

    // Voxels unreachable from any seed cannot exist in a connected grid, but
    // seeds supplied by a caller may not cover every 6-connected component.
    if labels.contains(&0) {
        return Err(Error::Param("seeds do not reach every voxel".into()));
    }
    LabelVolume::new(dims, v.spacing(), labels)
}

/// Minima detection followed by flooding.
pub fn watershed(v: &ScalarVolume) -> Result<LabelVolume> {
    seeded_watershed(v, &find_local_minima(v))
}

/// Relabels non-zero labels to `1..=K` in order of first appearance; 0 stays 0.
pub fn compact_labels(lv: &LabelVolume) -> LabelVolume {
    let mut map: HashMap<u32, u32> = HashMap::new();
    let mut next = 0u32;
    let labels = lv
        .labels()
        .iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                *map.entry(l).or_insert_with(|| {
                    next += 1;
                    next
                })
            }
        })
        .collect();
    LabelVolume::new(lv.dims(), lv.spacing(), labels).expect("geometry unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;

    fn vol(dims: Dims, data: Vec<f32>) -> ScalarVolume {
        ScalarVolume::new(dims, Spacing::ISOTROPIC, data).unwrap()
    }

    #[test]
    fn ramp_has_single_minimum() {
        let d = Dims::new(4, 3, 2);
        let data = (0..d.len()).map(|i| i as f32).collect();
        let m = find_local_minima(&vol(d, data));
        assert_eq!(m.len(), 1);
        assert_eq!(m.components[0].voxels, vec![VoxelIndex::new(0, 0, 0)]);
    }

    #[test]
    fn constant_is_one_plateau() {
        let d = Dims::new(3, 3, 3);
        let m = find_local_minima(&vol(d, vec![0.2; 27]));
        assert_eq!(m.len(), 1);
        assert_eq!(m.components[0].voxels.len(), 27);
    }

    #[test]
    fn profile_minima_and_flood() {
        let v = vol(Dims::new(5, 1, 1), vec![3.0, 1.0, 3.0, 2.0, 3.0]);
        let m = find_local_minima(&v);
        assert_eq!(m.len(), 2);
        assert_eq!(m.components[0].voxels, vec![VoxelIndex::new(1, 0, 0)]);
        assert_eq!(m.components[1].voxels, vec![VoxelIndex::new(3, 0, 0)]);
        let l = seeded_watershed(&v, &m).unwrap();
        assert_eq!(l.labels(), &[1, 1, 1, 2, 2]);
    }

    #[test]
    fn two_basins_in_plane() {
        // Rows listed top to bottom as y = 0, 1, 2.
        let v = vol(Dims::new(3, 3, 1), vec![5.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 2.0, 5.0]);
        let m = find_local_minima(&v);
        assert_eq!(m.len(), 2);
        let l = seeded_watershed(&v, &m).unwrap();
        assert_eq!(l.labels(), &[1, 1, 1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn plateau_with_lower_diagonal_is_not_minimum() {
        // The 0.5 plateau touches 0.1 only diagonally; 26-connectivity sees it.
        let d = Dims::new(2, 2, 1);
        let m = find_local_minima(&vol(d, vec![0.5, 0.9, 0.9, 0.1]));
        assert_eq!(m.len(), 1);
        assert_eq!(m.components[0].value, 0.1);
    }

    #[test]
    fn single_seed_labels_everything() {
        let d = Dims::new(4, 4, 2);
        let data = (0..d.len()).map(|i| ((i * 7) % 5) as f32).collect();
        let v = vol(d, data);
        let seeds = MinimaSet {
            components: vec![MinimumComponent {
                voxels: vec![VoxelIndex::new(2, 1, 1)],
                value: 0.0,
            }],
        };
        let l = seeded_watershed(&v, &seeds).unwrap();
        assert!(l.labels().iter().all(|&x| x == 1));
    }

    #[test]
    fn empty_seed_set_errors() {
        let v = vol(Dims::new(2, 1, 1), vec![0.0, 1.0]);
        assert!(matches!(
            seeded_watershed(&v, &MinimaSet::default()),
            Err(Error::EmptySeeds)
        ));
    }

    #[test]
    fn compact_examples() {
        let d = Dims::new(4, 1, 1);
        let l = LabelVolume::new(d, Spacing::ISOTROPIC, vec![5, 9, 9, 5]).unwrap();
        assert_eq!(compact_labels(&l).labels(), &[1, 2, 2, 1]);
        let l = LabelVolume::new(d, Spacing::ISOTROPIC, vec![9, 5, 0, 5]).unwrap();
        assert_eq!(compact_labels(&l).labels(), &[1, 2, 0, 2]);
        let l = LabelVolume::new(d, Spacing::ISOTROPIC, vec![1, 2, 2, 3]).unwrap();
        assert_eq!(compact_labels(&l), l);
        let l = LabelVolume::new(d, Spacing::ISOTROPIC, vec![0; 4]).unwrap();
        assert_eq!(compact_labels(&l), l);
        assert_eq!(compact_labels(&l).count_labels(), 0);
    }
}
