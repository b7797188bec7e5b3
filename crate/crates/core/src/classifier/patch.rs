use crate::error::{Error, Result};
use crate::merge_forest::ForestNode;
use crate::volume::{Dims, LabelVolume, ScalarVolume, Spacing};

/// Side length of the cubic classifier input.
pub const PATCH_SIDE: usize = 32;

/// Voxels added on each side of a hypothesis bounding box before cropping.
pub const PATCH_MARGIN: usize = 2;

/// Cubic intensity patch in `[0, 1]`, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    data: Vec<f32>,
    /// Forest node the patch was cut for (0 when not from a forest).
    pub node: u32,
    pub source: String,
}

impl Patch {
    pub fn new(side: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 || data.len() != side * side * side {
            return Err(Error::DimsMismatch(format!(
                "patch of side {side} needs {} values, got {}",
                side * side * side,
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Data(format!("patch value {x} outside [0, 1]")));
        }
        Ok(Patch {
            side,
            data,
            node: 0,
            source: String::new(),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_volume(&self) -> Result<ScalarVolume> {
        let s = self.side;
        ScalarVolume::new(Dims::new(s, s, s), Spacing::ISOTROPIC, self.data.clone())
    }

    pub fn from_volume(v: &ScalarVolume) -> Result<Self> {
        let [x, y, z] = v.dims().as_array();
        if x != y || y != z {
            return Err(Error::DimsMismatch(format!(
                "patch volume must be cubic, got {x}x{y}x{z}"
            )));
        }
        Patch::new(x, v.data().to_vec())
    }
}

/// A segmentation hypothesis as the classifiers see it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub patch: Patch,
    /// Fraction of each patch voxel belonging to the hypothesis.
    pub mask: Vec<f32>,
    pub voxel_count: u64,
    /// Physical volume in µm³.
    pub volume: f64,
}

impl Hypothesis {
    /// The patch with non-member voxels zeroed, for models trained that way.
    pub fn masked_patch(&self) -> Patch {
        let data = self
            .patch
            .data
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m >= 0.5 { v } else { 0.0 })
            .collect();
        Patch {
            data,
            ..self.patch.clone()
        }
    }
}

/// Voxel lists of every label, so forest nodes can be gathered without
/// rescanning the volume.
#[derive(Debug, Clone)]
pub struct RegionIndex {
    members: Vec<Vec<usize>>,
}

impl RegionIndex {
    pub fn new(labels: &LabelVolume) -> Self {
        let mut members = vec![Vec::new(); labels.max_label() as usize + 1];
        for (i, &l) in labels.labels().iter().enumerate() {
            members[l as usize].push(i);
        }
        RegionIndex { members }
    }

    pub fn voxels(&self, label: u32) -> &[usize] {
        self.members.get(label as usize).map_or(&[], |v| v.as_slice())
    }

    /// Ascending voxel indices of the union of `labels`.
    pub fn union(&self, labels: &[u32]) -> Vec<usize> {
        let mut out: Vec<usize> = labels.iter().flat_map(|&l| self.voxels(l).iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

/// Patch for a forest node: the union of its supervoxels.
pub fn extract_patch(v: &ScalarVolume, node: &ForestNode, supervoxels: &LabelVolume) -> Result<Hypothesis> {
    supervoxels.check_aligned(v)?;
    extract_patch_indexed(v, node, &RegionIndex::new(supervoxels))
}

pub fn extract_patch_indexed(v: &ScalarVolume, node: &ForestNode, index: &RegionIndex) -> Result<Hypothesis> {
    let voxels = index.union(&node.regions);
    extract_region_patch(v, &voxels, node.id)
}

/// Crops the bounding box of `voxels`, grown by [`PATCH_MARGIN`], into a
/// [`PATCH_SIDE`]³ patch. Boxes that fit are centred and copied verbatim
/// with edge replication; larger boxes are resampled trilinearly with one
/// scale for all axes, so the aspect ratio is kept.
pub fn extract_region_patch(v: &ScalarVolume, voxels: &[usize], node: u32) -> Result<Hypothesis> {
    extract_region_patch_sized(v, voxels, node, PATCH_SIDE)
}

pub fn extract_region_patch_sized(v: &ScalarVolume, voxels: &[usize], node: u32, side: usize) -> Result<Hypothesis> {
    if voxels.is_empty() {
        return Err(Error::EmptyNode(format!("node {node} covers no voxels")));
    }
    let dims = v.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for &i in voxels {
        let c = dims.coords(i);
        for (a, x) in [c.x, c.y, c.z].into_iter().enumerate() {
            lo[a] = lo[a].min(x);
            hi[a] = hi[a].max(x);
        }
    }
    let bbox = Dims::new(hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1);
    let mut inside = vec![false; bbox.len()];
    for &i in voxels {
        let c = dims.coords(i);
        inside[bbox.index(c.x - lo[0], c.y - lo[1], c.z - lo[2])] = true;
    }
    let member = |p: [isize; 3]| -> f32 {
        let local: Option<Vec<usize>> = (0..3)
            .map(|a| {
                let q = p[a] - lo[a] as isize;
                (q >= 0 && (q as usize) < bbox.as_array()[a]).then_some(q as usize)
            })
            .collect();
        match local {
            Some(q) if inside[bbox.index(q[0], q[1], q[2])] => 1.0,
            _ => 0.0,
        }
    };
    let d = dims.as_array().map(|n| n as isize);
    let intensity = |p: [isize; 3]| -> f32 {
        v.get(
            p[0].clamp(0, d[0] - 1) as usize,
            p[1].clamp(0, d[1] - 1) as usize,
            p[2].clamp(0, d[2] - 1) as usize,
        )
    };

    let m = PATCH_MARGIN as isize;
    let glo: [isize; 3] = std::array::from_fn(|a| lo[a] as isize - m);
    let ghi: [isize; 3] = std::array::from_fn(|a| hi[a] as isize + m);
    let extent: [usize; 3] = std::array::from_fn(|a| (ghi[a] - glo[a] + 1) as usize);
    let n = side * side * side;
    let mut data = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);

    if extent.iter().all(|&e| e <= side) {
        let origin: [isize; 3] = std::array::from_fn(|a| glo[a] - ((side - extent[a]) / 2) as isize);
        for z in 0..side as isize {
            for y in 0..side as isize {
                for x in 0..side as isize {
                    let p = [origin[0] + x, origin[1] + y, origin[2] + z];
                    data.push(intensity(p));
                    mask.push(member(p));
                }
            }
        }
    } else {
        let scale = *extent.iter().max().expect("three axes") as f64 / side as f64;
        let centre: [f64; 3] = std::array::from_fn(|a| (glo[a] + ghi[a]) as f64 / 2.0);
        let start: [f64; 3] = std::array::from_fn(|a| centre[a] - side as f64 * scale / 2.0 + scale / 2.0);
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    let q = [
                        start[0] + x as f64 * scale,
                        start[1] + y as f64 * scale,
                        start[2] + z as f64 * scale,
                    ];
                    data.push(trilinear(q, &intensity).clamp(0.0, 1.0));
                    mask.push(trilinear(q, &member));
                }
            }
        }
    }
    let mut patch = Patch::new(side, data)?;
    patch.node = node;
    Ok(Hypothesis {
        patch,
        mask,
        voxel_count: voxels.len() as u64,
        volume: voxels.len() as f64 * v.spacing().voxel_volume(),
    })
}

fn trilinear(q: [f64; 3], f: &impl Fn([isize; 3]) -> f32) -> f32 {
    let base: [isize; 3] = std::array::from_fn(|a| q[a].floor() as isize);
    let frac: [f64; 3] = std::array::from_fn(|a| q[a] - base[a] as f64);
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut p = base;
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                p[a] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if w != 0.0 {
            acc += w * f(p) as f64;
        }
    }
    acc as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> ScalarVolume {
        let dims = Dims::new(n, n, n);
        let data = (0..dims.len()).map(|i| i as f32 / dims.len() as f32).collect();
        ScalarVolume::new(dims, Spacing([1.0, 1.0, 2.0]), data).unwrap()
    }

    fn cube_voxels(dims: Dims, lo: usize, len: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for z in lo..lo + len {
            for y in lo..lo + len {
                for x in lo..lo + len {
                    out.push(dims.index(x, y, z));
                }
            }
        }
        out
    }

    #[test]
    fn small_box_is_a_centred_crop() {
        let v = ramp(64);
        let voxels = cube_voxels(v.dims(), 27, 10);
        let h = extract_region_patch(&v, &voxels, 5).unwrap();
        assert_eq!(h.patch.side(), 32);
        assert_eq!(h.patch.node, 5);
        assert_eq!(h.voxel_count, 1000);
        assert_eq!(h.volume, 2000.0);
        // Grown box is 14 wide starting at 25, centred with 9 voxels of context.
        let o = 25 - 9;
        for (z, y, x) in [(0, 0, 0), (31, 31, 31), (9, 12, 20)] {
            let p = h.patch.data()[z * 1024 + y * 32 + x];
            assert_eq!(p, v.get(o + x, o + y, o + z));
        }
        let inside: f32 = h.mask.iter().sum();
        assert_eq!(inside, 1000.0);
        assert_eq!(h.mask[(9 + 2) * 1024 + (9 + 2) * 32 + 9 + 2], 1.0);
    }

    #[test]
    fn large_box_is_downsampled() {
        let v = ramp(80);
        let voxels = cube_voxels(v.dims(), 8, 64);
        let h = extract_region_patch(&v, &voxels, 1).unwrap();
        assert_eq!(h.patch.data().len(), 32 * 32 * 32);
        assert!(h.patch.data().iter().all(|x| (0.0..=1.0).contains(x)));
        // The ramp is linear, so trilinear sampling reproduces it away from the clamp.
        let scale = 68.0 / 32.0;
        let start = 39.5 - 16.0 * scale + scale / 2.0;
        let q = start + 15.0 * scale;
        let expect = (q * (1.0 + 80.0 + 6400.0)) / 512000.0;
        let got = h.patch.data()[15 * 1024 + 15 * 32 + 15] as f64;
        assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
        let centre = h.mask[16 * 1024 + 16 * 32 + 16];
        assert_eq!(centre, 1.0);
        assert_eq!(h.mask[0], 0.0);
    }

    #[test]
    fn corner_node_replicates_edges() {
        let v = ramp(16);
        let voxels = vec![0];
        let h = extract_region_patch(&v, &voxels, 1).unwrap();
        // Grown box [-2, 2]; origin -2 - 13 = -15 on every axis.
        assert_eq!(h.patch.data()[0], v.get(0, 0, 0));
        assert_eq!(h.patch.data()[31], v.get(15, 0, 0));
        assert_eq!(h.patch.data()[15 * 1024 + 15 * 32 + 15], v.get(0, 0, 0));
        assert_eq!(h.patch.data()[15 * 1024 + 15 * 32 + 16], v.get(1, 0, 0));
        assert_eq!(h.mask.iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn empty_node_is_an_error() {
        let v = ramp(4);
        assert!(matches!(extract_region_patch(&v, &[], 3), Err(Error::EmptyNode(_))));
    }

    #[test]
    fn forest_node_gathers_its_supervoxels() {
        let dims = Dims::new(6, 1, 1);
        let v = ScalarVolume::new(dims, Spacing::ISOTROPIC, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let sv = LabelVolume::new(dims, Spacing::ISOTROPIC, vec![1, 1, 2, 2, 3, 3]).unwrap();
        let node = ForestNode {
            id: 4,
            regions: vec![1, 3],
            voxel_count: 4,
            volume: 4.0,
            children: Some((1, 3)),
            parent: None,
            merge_score: Some(0.1),
        };
        let h = extract_patch(&v, &node, &sv).unwrap();
        assert_eq!(h.voxel_count, 4);
        assert_eq!(h.mask.iter().sum::<f32>(), 4.0);
        assert_eq!(h.masked_patch().data().iter().filter(|&&x| x > 0.0).count(), 3);
    }

    #[test]
    fn patch_volume_round_trip() {
        let p = Patch::new(2, vec![0.0, 0.5, 1.0, 0.25, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(Patch::from_volume(&p.to_volume().unwrap()).unwrap(), p);
        assert!(Patch::new(2, vec![0.0; 7]).is_err());
        assert!(Patch::new(1, vec![1.5]).is_err());
    }
}
