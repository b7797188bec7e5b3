//! Synthetic membrane-stained tissue: 3D Voronoi cell complexes rendered
//! with bright walls, per-slice depth attenuation, blur and noise.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::classifier::{extract_region_patch, Hypothesis, PatchClass};
use crate::error::{Error, Result};
use crate::preprocess::{ball_offsets, gaussian_smooth};
use crate::volume::{
    for_each_face_neighbor, for_each_face_pair, write_volume, Dims, LabelVolume, ScalarVolume, Spacing, Volume,
};

/// Site draws attempted before giving up on a connected tessellation.
const MAX_TESSELLATIONS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub dims: Dims,
    pub spacing: Spacing,
    pub n_cells: usize,
    /// Wall half-thickness in voxels; 1 marks only the voxels touching another cell.
    pub membrane_width: usize,
    pub membrane_intensity: f32,
    pub interior_intensity: f32,
    /// Slice `z` is scaled by `attenuation^z`.
    pub attenuation: f64,
    pub noise_sigma: f64,
    /// Isotropic blur in voxels; 0 disables it.
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            dims: Dims::new(64, 64, 64),
            spacing: Spacing::ISOTROPIC,
            n_cells: 30,
            membrane_width: 1,
            membrane_intensity: 0.9,
            interior_intensity: 0.1,
            attenuation: 0.99,
            noise_sigma: 0.03,
            blur_sigma: 1.0,
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.dims.is_empty() {
            return bad("phantom dims must be positive".into());
        }
        if self.n_cells == 0 || self.n_cells > self.dims.len() {
            return bad(format!(
                "n_cells must be in 1..={}, got {}",
                self.dims.len(),
                self.n_cells
            ));
        }
        if self.membrane_width == 0 {
            return bad("membrane_width must be at least 1".into());
        }
        let unit = |x: f32| (0.0..=1.0).contains(&x);
        if !unit(self.membrane_intensity) || !unit(self.interior_intensity) {
            return bad("intensities must lie in [0, 1]".into());
        }
        if self.membrane_intensity <= self.interior_intensity {
            return bad("membrane must be brighter than the interior".into());
        }
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return bad(format!("attenuation must be in (0, 1], got {}", self.attenuation));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad("blur_sigma must be non-negative".into());
        }
        if self.spacing.0.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return bad("spacing must be positive".into());
        }
        Ok(())
    }

    fn min_separation(&self) -> f64 {
        let coarsest = self.spacing.0.iter().copied().fold(0.0, f64::max);
        2.0 * self.membrane_width as f64 * coarsest
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ScalarVolume,
    pub truth: LabelVolume,
    /// Physical site positions; site `k` owns label `k + 1`.
    pub sites: Vec<[f64; 3]>,
}

pub fn generate_phantom(params: &PhantomParams) -> Result<Phantom> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut attempt = 0;
    let (sites, truth) = loop {
        attempt += 1;
        let sites = draw_sites(params, &mut rng)?;
        let truth = voronoi_labels(params.dims, params.spacing, &sites)?;
        if cells_connected(&truth, sites.len()) {
            break (sites, truth);
        }
        if attempt == MAX_TESSELLATIONS {
            return Err(Error::Param(format!(
                "no tessellation with {} connected non-empty cells after {attempt} draws",
                params.n_cells
            )));
        }
    };
    let clean = render(&truth, params, true);
    let blurred = gaussian_smooth(&clean, [params.blur_sigma; 3]);
    let image = add_noise(blurred, params.noise_sigma, &mut rng)?;
    Ok(Phantom { image, truth, sites })
}

fn draw_sites(params: &PhantomParams, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 3]>> {
    let extent: Vec<f64> = (0..3)
        .map(|a| (params.dims.as_array()[a] - 1) as f64 * params.spacing.0[a])
        .collect();
    let sep2 = params.min_separation().powi(2);
    let mut sites: Vec<[f64; 3]> = Vec::with_capacity(params.n_cells);
    let budget = 1000 * params.n_cells;
    let mut tries = 0;
    while sites.len() < params.n_cells {
        tries += 1;
        if tries > budget {
            return Err(Error::Param(format!(
                "cannot place {} sites {:.3} µm apart in the volume",
                params.n_cells,
                sep2.sqrt()
            )));
        }
        let p = [
            rng.random::<f64>() * extent[0],
            rng.random::<f64>() * extent[1],
            rng.random::<f64>() * extent[2],
        ];
        if sites.iter().all(|s| dist2(s, &p) >= sep2) {
            sites.push(p);
        }
    }
    Ok(sites)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Nearest-site labeling under physical distance; ties go to the lower site index.
pub fn voronoi_labels(dims: Dims, spacing: Spacing, sites: &[[f64; 3]]) -> Result<LabelVolume> {
    let plane = dims.x * dims.y;
    let mut labels = vec![0u32; dims.len()];
    labels.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let pz = z as f64 * spacing.0[2];
        for y in 0..dims.y {
            let py = y as f64 * spacing.0[1];
            for x in 0..dims.x {
                let p = [x as f64 * spacing.0[0], py, pz];
                let mut best = (f64::INFINITY, 0usize);
                for (k, s) in sites.iter().enumerate() {
                    let d = dist2(s, &p);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                slab[y * dims.x + x] = best.1 as u32 + 1;
            }
        }
    });
    LabelVolume::new(dims, spacing, labels)
}

/// True when every label `1..=n` is present and forms one 6-connected component.
pub fn cells_connected(lv: &LabelVolume, n: usize) -> bool {
    let labels = lv.labels();
    let dims = lv.dims();
    let mut seen = vec![false; labels.len()];
    let mut components = vec![0usize; n + 1];
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        let l = labels[start];
        if l == 0 || l as usize > n {
            return false;
        }
        components[l as usize] += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for_each_face_neighbor(dims, i, |j| {
                if !seen[j] && labels[j] == l {
                    seen[j] = true;
                    queue.push_back(j);
                }
            });
        }
    }
    components[1..].iter().all(|&c| c == 1)
}

/// Voxels within `membrane_width - 1` of a voxel that touches another cell.
pub fn membrane_mask(truth: &LabelVolume, membrane_width: usize) -> Vec<bool> {
    let dims = truth.dims();
    let labels = truth.labels();
    let mut boundary = vec![false; labels.len()];
    for_each_face_pair(dims, |a, b| {
        if labels[a] != labels[b] {
            boundary[a] = true;
            boundary[b] = true;
        }
    });
    if membrane_width <= 1 {
        return boundary;
    }
    let ball = ball_offsets(membrane_width - 1);
    let mut out = boundary.clone();
    let d = dims.as_array().map(|n| n as isize);
    for (i, _) in boundary.iter().enumerate().filter(|(_, &b)| b) {
        let c = dims.coords(i);
        for off in &ball {
            let (x, y, z) = (c.x as isize + off[0], c.y as isize + off[1], c.z as isize + off[2]);
            if x >= 0 && y >= 0 && z >= 0 && x < d[0] && y < d[1] && z < d[2] {
                out[dims.index(x as usize, y as usize, z as usize)] = true;
            }
        }
    }
    out
}

/// Two-level render, optionally depth-attenuated, before blur and noise.
pub fn render(truth: &LabelVolume, params: &PhantomParams, attenuate: bool) -> ScalarVolume {
    let dims = truth.dims();
    let wall = membrane_mask(truth, params.membrane_width);
    let plane = dims.x * dims.y;
    let data: Vec<f32> = wall
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let base = if w {
                params.membrane_intensity
            } else {
                params.interior_intensity
            };
            if attenuate {
                (base as f64 * params.attenuation.powi((i / plane) as i32)) as f32
            } else {
                base
            }
        })
        .collect();
    ScalarVolume::new(dims, truth.spacing(), data).expect("render matches dims")
}

fn add_noise(v: ScalarVolume, sigma: f64, rng: &mut ChaCha8Rng) -> Result<ScalarVolume> {
    if sigma == 0.0 {
        return Ok(v);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Param(e.to_string()))?;
    let (dims, spacing) = (v.dims(), v.spacing());
    let data = v
        .into_data()
        .into_iter()
        .map(|x| (x as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    ScalarVolume::new(dims, spacing, data)
}

/// Cell pairs sharing at least one face, ascending.
pub fn cell_adjacency(truth: &LabelVolume) -> BTreeSet<(u32, u32)> {
    let labels = truth.labels();
    let mut out = BTreeSet::new();
    for_each_face_pair(truth.dims(), |a, b| {
        let (la, lb) = (labels[a], labels[b]);
        if la != lb && la != 0 && lb != 0 {
            out.insert((la.min(lb), la.max(lb)));
        }
    });
    out
}

#[derive(Debug, Clone)]
pub struct LabeledPatch {
    pub hypothesis: Hypothesis,
    pub class: PatchClass,
    /// Ground-truth cells the source region overlaps.
    pub cells: Vec<u32>,
}

/// Per-class patch counts, ordered like the classes: under, correct, over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub under: usize,
    pub correct: usize,
    pub over: usize,
}

/// Cells smaller than this are not used as patch sources.
const MIN_SOURCE_VOXELS: usize = 64;

/// Labelled training patches cut from a phantom: whole cells (correct),
/// plane-split fragments of a cell (over) and unions of 2-3 adjacent cells
/// (under). Patches are returned class by class, under first.
pub fn generate_patch_dataset(params: &PhantomParams, counts: ClassCounts) -> Result<Vec<LabeledPatch>> {
    if counts.under == 0 || counts.correct == 0 || counts.over == 0 {
        return Err(Error::Param("each class needs at least one patch".into()));
    }
    let phantom = generate_phantom(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_da7a);
    let dims = phantom.truth.dims();
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in phantom.truth.labels().iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let usable: Vec<u32> = members
        .iter()
        .filter(|(_, v)| v.len() >= MIN_SOURCE_VOXELS)
        .map(|(&l, _)| l)
        .collect();
    let adjacency: Vec<(u32, u32)> = cell_adjacency(&phantom.truth)
        .into_iter()
        .filter(|(a, b)| usable.contains(a) && usable.contains(b))
        .collect();
    let too_small =
        |what: &str, have: usize, want: usize| Error::Param(format!("phantom offers {have} {what}, {want} requested"));
    if usable.len() < counts.correct {
        return Err(too_small("usable cells", usable.len(), counts.correct));
    }
    if adjacency.len() < counts.under {
        return Err(too_small("adjacent cell pairs", adjacency.len(), counts.under));
    }
    if usable.len() * 4 < counts.over {
        return Err(too_small("fragment sources", usable.len() * 4, counts.over));
    }
    let mut out = Vec::with_capacity(counts.under + counts.correct + counts.over);
    let mut emit = |voxels: &[usize], class: PatchClass, cells: Vec<u32>| -> Result<()> {
        let hypothesis = extract_region_patch(&phantom.image, voxels, 0)?;
        out.push(LabeledPatch {
            hypothesis,
            class,
            cells,
        });
        Ok(())
    };

    let mut pairs = adjacency.clone();
    pairs.shuffle(&mut rng);
    for &(a, b) in pairs.iter().take(counts.under) {
        let mut cells = vec![a, b];
        if rng.random_bool(0.5) {
            let third: Vec<u32> = adjacency
                .iter()
                .filter_map(|&(p, q)| match (p, q) {
                    _ if p == a || p == b => Some(q),
                    _ if q == a || q == b => Some(p),
                    _ => None,
                })
                .filter(|c| !cells.contains(c))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if let Some(&c) = third.choose(&mut rng) {
                cells.push(c);
            }
        }
        let mut voxels: Vec<usize> = cells.iter().flat_map(|c| members[c].iter().copied()).collect();
        voxels.sort_unstable();
        cells.sort_unstable();
        emit(&voxels, PatchClass::Under, cells)?;
    }

    let mut order = usable.clone();
    order.shuffle(&mut rng);
    for &c in order.iter().take(counts.correct) {
        emit(&members[&c], PatchClass::Correct, vec![c])?;
    }

    for k in 0..counts.over {
        let c = order[k % order.len()];
        let fragment = random_fragment(&members[&c], dims, &mut rng);
        emit(&fragment, PatchClass::Over, vec![c])?;
    }
    Ok(out)
}

/// One side of a random plane through the cell centroid, keeping between
/// 20% and 80% of the voxels.
fn random_fragment(voxels: &[usize], dims: Dims, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let coords: Vec<[f64; 3]> = voxels
        .iter()
        .map(|&i| {
            let c = dims.coords(i);
            [c.x as f64, c.y as f64, c.z as f64]
        })
        .collect();
    let n = coords.len() as f64;
    let centroid = (0..3)
        .map(|a| coords.iter().map(|c| c[a]).sum::<f64>() / n)
        .collect::<Vec<_>>();
    loop {
        let normal: [f64; 3] = [
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ];
        let offset = (rng.random::<f64>() - 0.5) * 0.6;
        let norm = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        let proj: Vec<f64> = coords
            .iter()
            .map(|c| (0..3).map(|a| (c[a] - centroid[a]) * normal[a] / norm).sum())
            .collect();
        let spread = proj.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let cut = offset * spread;
        let side: Vec<usize> = voxels
            .iter()
            .zip(&proj)
            .filter(|(_, &p)| p < cut)
            .map(|(&i, _)| i)
            .collect();
        let frac = side.len() as f64 / n;
        if (0.2..=0.8).contains(&frac) {
            return side;
        }
    }
}

/// Writes `patch_NNNN.mvol.json` pairs plus `labels.txt` into `dir`.
pub fn write_patch_dataset(patches: &[LabeledPatch], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("# patch_file,class\n");
    for (k, p) in patches.iter().enumerate() {
        let name = format!("patch_{k:04}.mvol.json");
        let vol = p.hypothesis.patch.to_volume()?;
        write_volume(&Volume::Scalar(vol), dir.join(&name))?;
        let _ = writeln!(index, "{name},{}", p.class.name());
    }
    let path = dir.join(crate::classifier::DATASET_INDEX);
    std::fs::write(&path, index).map_err(|e| Error::io(&path, e))
}
