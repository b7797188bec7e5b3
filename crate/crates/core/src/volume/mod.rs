//! Dense volumetric grids shared by every stage of the pipeline.
//!
//! All volumes are stored x-fastest: the linear index of voxel `(x, y, z)` is
//! `x + dims.x * (y + dims.y * z)`.

mod io;

pub use io::{read_volume, write_scalar_as, write_volume, Dtype, MvolHeader, Volume};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Dims { x, y, z }
    }

    pub const fn len(&self) -> usize {
        self.x * self.y * self.z
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.x && y < self.y && z < self.z);
        x + self.x * (y + self.y * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> VoxelIndex {
        let x = idx % self.x;
        let rest = idx / self.x;
        VoxelIndex {
            x,
            y: rest % self.y,
            z: rest / self.y,
        }
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        v.x < self.x && v.y < self.y && v.z < self.z
    }

    fn validate(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 || self.z == 0 {
            return Err(Error::Param(format!(
                "volume extents must be positive, got {:?}",
                self.as_array()
            )));
        }
        Ok(())
    }
}

/// Physical voxel size in micrometers along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub const ISOTROPIC: Spacing = Spacing([1.0, 1.0, 1.0]);

    pub fn voxel_volume(&self) -> f64 {
        self.0[0] * self.0[1] * self.0[2]
    }

    fn validate(&self) -> Result<()> {
        if self.0.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::Param(format!(
                "spacing must be positive and finite, got {:?}",
                self.0
            )))
        }
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::ISOTROPIC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelIndex {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        VoxelIndex { x, y, z }
    }
}

/// Intensity volume. Values are raw after reading and lie in `[0, 1]` once
/// [`normalize`] has run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                dims.x,
                dims.y,
                dims.z
            )));
        }
        Ok(ScalarVolume { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    /// Same geometry, new samples.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> ScalarVolume {
        debug_assert_eq!(data.len(), self.data.len());
        ScalarVolume {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Segment identifiers aligned with a [`ScalarVolume`]; label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: Spacing,
    labels: Vec<u32>,
}

// Spacing holds validated finite floats, so equality is reflexive.
impl Eq for Spacing {}

impl LabelVolume {
    pub fn new(dims: Dims, spacing: Spacing, labels: Vec<u32>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if labels.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "label length {} does not match {}x{}x{}",
                labels.len(),
                dims.x,
                dims.y,
                dims.z
            )));
        }
        Ok(LabelVolume { dims, spacing, labels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct non-zero labels.
    pub fn count_labels(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn check_aligned(&self, v: &ScalarVolume) -> Result<()> {
        if self.dims != v.dims() {
            return Err(Error::DimsMismatch(format!(
                "labels {:?} vs intensities {:?}",
                self.dims.as_array(),
                v.dims().as_array()
            )));
        }
        Ok(())
    }
}

/// Globally rescales intensities to `[0, 1]`. A constant volume maps to zeros.
pub fn normalize(v: &ScalarVolume) -> ScalarVolume {
    let (lo, hi) = v.min_max();
    let range = hi as f64 - lo as f64;
    let data = if range > 0.0 {
        v.data()
            .iter()
            .map(|&x| (((x as f64 - lo as f64) / range) as f32).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; v.data().len()]
    };
    v.with_data(data)
}

/// 6-connected neighbors of `i`, clipped at the volume border.
pub fn face_neighbors(i: VoxelIndex, dims: Dims) -> Vec<VoxelIndex> {
    let mut out = Vec::with_capacity(6);
    if i.x > 0 {
        out.push(VoxelIndex::new(i.x - 1, i.y, i.z));
    }
    if i.x + 1 < dims.x {
        out.push(VoxelIndex::new(i.x + 1, i.y, i.z));
    }
    if i.y > 0 {
        out.push(VoxelIndex::new(i.x, i.y - 1, i.z));
    }
    if i.y + 1 < dims.y {
        out.push(VoxelIndex::new(i.x, i.y + 1, i.z));
    }
    if i.z > 0 {
        out.push(VoxelIndex::new(i.x, i.y, i.z - 1));
    }
    if i.z + 1 < dims.z {
        out.push(VoxelIndex::new(i.x, i.y, i.z + 1));
    }
    out
}

/// Linear-index variant of [`face_neighbors`] for hot loops.
#[inline]
pub(crate) fn for_each_face_neighbor(dims: Dims, idx: usize, mut f: impl FnMut(usize)) {
    let sx = 1;
    let sy = dims.x;
    let sz = dims.x * dims.y;
    let x = idx % dims.x;
    let y = (idx / dims.x) % dims.y;
    let z = idx / sz;
    if x > 0 {
        f(idx - sx);
    }
    if x + 1 < dims.x {
        f(idx + sx);
    }
    if y > 0 {
        f(idx - sy);
    }
    if y + 1 < dims.y {
        f(idx + sy);
    }
    if z > 0 {
        f(idx - sz);
    }
    if z + 1 < dims.z {
        f(idx + sz);
    }
}

/// Visits every unordered 6-adjacent voxel pair exactly once, as `(a, b)` with `a < b`.
pub(crate) fn for_each_face_pair(dims: Dims, mut f: impl FnMut(usize, usize)) {
    let sy = dims.x;
    let sz = dims.x * dims.y;
    for z in 0..dims.z {
        for y in 0..dims.y {
            let row = dims.index(0, y, z);
            for x in 0..dims.x {
                let idx = row + x;
                if x + 1 < dims.x {
                    f(idx, idx + 1);
                }
                if y + 1 < dims.y {
                    f(idx, idx + sy);
                }
                if z + 1 < dims.z {
                    f(idx, idx + sz);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol(dims: Dims, data: Vec<f32>) -> ScalarVolume {
        ScalarVolume::new(dims, Spacing::ISOTROPIC, data).unwrap()
    }

    #[test]
    fn normalize_u8_range() {
        let v = vol(Dims::new(3, 1, 1), vec![0.0, 255.0, 128.0]);
        let n = normalize(&v);
        assert_eq!(n.data()[0], 0.0);
        assert_eq!(n.data()[1], 1.0);
        assert!((n.data()[2] as f64 - 128.0 / 255.0).abs() < 1e-7);
        assert!((n.data()[2] as f64 - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let v = vol(Dims::new(2, 2, 2), vec![40.0; 8]);
        assert!(normalize(&v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_unit_range_is_identity() {
        let v = vol(Dims::new(4, 1, 1), vec![0.0, 0.25, 1.0, 0.7]);
        assert_eq!(normalize(&v), v);
    }

    #[test]
    fn neighbor_counts() {
        let d = Dims::new(3, 3, 3);
        assert_eq!(face_neighbors(VoxelIndex::new(0, 0, 0), d).len(), 3);
        assert_eq!(face_neighbors(VoxelIndex::new(1, 1, 1), d).len(), 6);
        assert!(face_neighbors(VoxelIndex::new(0, 0, 0), Dims::new(1, 1, 1)).is_empty());
    }

    #[test]
    fn pair_count_matches_formula() {
        let d = Dims::new(4, 3, 2);
        let mut n = 0;
        for_each_face_pair(d, |a, b| {
            assert!(a < b);
            n += 1;
        });
        assert_eq!(n, 3 * 3 * 2 + 4 * 2 * 2 + 4 * 3);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ScalarVolume::new(Dims::new(2, 2, 1), Spacing::ISOTROPIC, vec![0.0; 3]).is_err());
        assert!(ScalarVolume::new(Dims::new(0, 2, 1), Spacing::ISOTROPIC, vec![]).is_err());
        assert!(ScalarVolume::new(Dims::new(1, 1, 1), Spacing([1.0, 0.0, 1.0]), vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_idempotent(data in prop::collection::vec(0.0f32..1000.0, 1..64)) {
            let n = data.len();
            let v = vol(Dims::new(n, 1, 1), data);
            let once = normalize(&v);
            prop_assert!(once.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
            let twice = normalize(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn face_neighbors_symmetric(dx in 1usize..5, dy in 1usize..5, dz in 1usize..5, seed in 0usize..1000) {
            let d = Dims::new(dx, dy, dz);
            let i = d.coords(seed % d.len());
            for j in face_neighbors(i, d) {
                prop_assert!(d.contains(j));
                prop_assert!(face_neighbors(j, d).contains(&i));
            }
            let mut lin = Vec::new();
            for_each_face_neighbor(d, d.index(i.x, i.y, i.z), |n| lin.push(d.coords(n)));
            prop_assert_eq!(lin, face_neighbors(i, d));
        }
    }
}
