//! Noise reduction and membrane-gap closing: separable 3D Gaussian smoothing
//! followed by grayscale closings with growing ball radii.
//!
//! Every output voxel is computed independently from the previous stage, so
//! results are bit-identical for any rayon pool size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Dims, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    /// Gaussian standard deviation in voxels along x, y, z.
    pub sigma: [f64; 3],
    /// Largest closing radius in voxels.
    pub r_cl_max: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            sigma: [1.0; 3],
            r_cl_max: 3,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Param(format!(
                "sigma must be finite and non-negative, got {:?}",
                self.sigma
            )));
        }
        if self.r_cl_max == 0 {
            return Err(Error::Param("r_cl_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Smoothing then iterative closing.
pub fn preprocess(v: &ScalarVolume, params: &PreprocessParams) -> Result<ScalarVolume> {
    params.validate()?;
    let smoothed = gaussian_smooth(v, params.sigma);
    Ok(iterative_closing(&smoothed, params.r_cl_max))
}

/// Discrete Gaussian truncated at `ceil(3 sigma)` and renormalized to sum 1.
/// Returns `[1.0]` for `sigma == 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

fn axis_stride(dims: Dims, axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, dims.x),
        1 => (dims.x, dims.y),
        _ => (dims.x * dims.y, dims.z),
    }
}

fn convolve_axis(input: &[f32], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<f32> {
    let radius = (kernel.len() / 2) as isize;
    let (stride, len) = axis_stride(dims, axis);
    let plane = dims.x * dims.y;
    let mut out = vec![0.0f32; input.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        for (off, o) in slab.iter_mut().enumerate() {
            let idx = z * plane + off;
            let pos = match axis {
                0 => off % dims.x,
                1 => off / dims.x,
                _ => z,
            } as isize;
            let base = idx as isize - pos * stride as isize;
            let mut acc = 0.0f64;
            for (k, w) in kernel.iter().enumerate() {
                let p = (pos + k as isize - radius).clamp(0, len as isize - 1);
                acc += w * input[(base + p * stride as isize) as usize] as f64;
            }
            *o = acc as f32;
        }
    });
    out
}

/// Separable Gaussian smoothing with edge replication; output clamped to `[0, 1]`.
pub fn gaussian_smooth(v: &ScalarVolume, sigma: [f64; 3]) -> ScalarVolume {
    let dims = v.dims();
    let mut data = v.data().to_vec();
    for (axis, &s) in sigma.iter().enumerate() {
        if s > 0.0 {
            data = convolve_axis(&data, dims, axis, &gaussian_kernel(s));
        }
    }
    if sigma.iter().any(|&s| s > 0.0) {
        data.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    }
    v.with_data(data)
}

/// Offsets of the discrete ball `{d : |d|_2 <= radius}` in voxel units.
pub fn ball_offsets(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn rank_filter(v: &ScalarVolume, radius: usize, pick: fn(f32, f32) -> f32, init: f32) -> ScalarVolume {
    let dims = v.dims();
    let input = v.data();
    let offsets = ball_offsets(radius);
    let r = radius as isize;
    let (nx, ny, nz) = (dims.x as isize, dims.y as isize, dims.z as isize);
    let linear: Vec<isize> = offsets.iter().map(|d| d[0] + nx * (d[1] + ny * d[2])).collect();
    let plane = dims.x * dims.y;
    let mut out = vec![0.0f32; input.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let z = z as isize;
        let z_inside = z >= r && z + r < nz;
        for (off, o) in slab.iter_mut().enumerate() {
            let x = (off % dims.x) as isize;
            let y = (off / dims.x) as isize;
            let mut acc = init;
            if z_inside && x >= r && x + r < nx && y >= r && y + r < ny {
                let idx = x + nx * (y + ny * z);
                for &l in &linear {
                    acc = pick(acc, input[(idx + l) as usize]);
                }
            } else {
                for d in &offsets {
                    let xx = (x + d[0]).clamp(0, nx - 1);
                    let yy = (y + d[1]).clamp(0, ny - 1);
                    let zz = (z + d[2]).clamp(0, nz - 1);
                    acc = pick(acc, input[(xx + nx * (yy + ny * zz)) as usize]);
                }
            }
            *o = acc;
        }
    });
    v.with_data(out)
}

/// Neighborhood maximum over a ball of `radius` voxels, edge-replicated.
pub fn grayscale_dilate(v: &ScalarVolume, radius: usize) -> ScalarVolume {
    rank_filter(v, radius, f32::max, f32::NEG_INFINITY)
}

/// Neighborhood minimum over a ball of `radius` voxels, edge-replicated.
pub fn grayscale_erode(v: &ScalarVolume, radius: usize) -> ScalarVolume {
    rank_filter(v, radius, f32::min, f32::INFINITY)
}

pub fn closing(v: &ScalarVolume, radius: usize) -> ScalarVolume {
    grayscale_erode(&grayscale_dilate(v, radius), radius)
}

/// Closings with radii `1, 2, ..., r_cl_max` applied in sequence.
pub fn iterative_closing(v: &ScalarVolume, r_cl_max: usize) -> ScalarVolume {
    (1..=r_cl_max).fold(v.clone(), |acc, r| closing(&acc, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn vol(dims: Dims, data: Vec<f32>) -> ScalarVolume {
        ScalarVolume::new(dims, Spacing::ISOTROPIC, data).unwrap()
    }

    fn random_vol(dims: Dims, seed: u64) -> ScalarVolume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        vol(dims, (0..dims.len()).map(|_| rng.random::<f32>()).collect())
    }

    /// Dense 3D convolution with a full (non-separable) kernel and edge replication.
    fn dense_gaussian_oracle(v: &ScalarVolume, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let d = v.dims();
        let mut w3 = Vec::new();
        let mut total = 0.0;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let q = (dx * dx + dy * dy + dz * dz) as f64;
                    let w = (-q / (2.0 * sigma * sigma)).exp();
                    w3.push(([dx, dy, dz], w));
                    total += w;
                }
            }
        }
        let (nx, ny, nz) = (d.x as isize, d.y as isize, d.z as isize);
        let mut out = vec![0.0; d.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for (o, w) in &w3 {
                        let xx = (x + o[0]).clamp(0, nx - 1) as usize;
                        let yy = (y + o[1]).clamp(0, ny - 1) as usize;
                        let zz = (z + o[2]).clamp(0, nz - 1) as usize;
                        acc += w / total * v.get(xx, yy, zz) as f64;
                    }
                    out[d.index(x as usize, y as usize, z as usize)] = acc;
                }
            }
        }
        out
    }

    fn brute_rank(v: &ScalarVolume, radius: usize, max: bool) -> Vec<f32> {
        let d = v.dims();
        let r = radius as isize;
        let mut out = vec![0.0; d.len()];
        for z in 0..d.z as isize {
            for y in 0..d.y as isize {
                for x in 0..d.x as isize {
                    let mut acc = if max { f32::NEG_INFINITY } else { f32::INFINITY };
                    for dz in -r..=r {
                        for dy in -r..=r {
                            for dx in -r..=r {
                                if dx * dx + dy * dy + dz * dz > r * r {
                                    continue;
                                }
                                let xx = (x + dx).clamp(0, d.x as isize - 1) as usize;
                                let yy = (y + dy).clamp(0, d.y as isize - 1) as usize;
                                let zz = (z + dz).clamp(0, d.z as isize - 1) as usize;
                                let s = v.get(xx, yy, zz);
                                acc = if max { acc.max(s) } else { acc.min(s) };
                            }
                        }
                    }
                    out[d.index(x as usize, y as usize, z as usize)] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn kernel_properties() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
        assert_eq!(gaussian_kernel(0.4).len(), 5);
    }

    #[test]
    fn smoothing_keeps_constants() {
        let v = ScalarVolume::filled(Dims::new(5, 6, 7), Spacing::ISOTROPIC, 0.5).unwrap();
        let s = gaussian_smooth(&v, [1.0, 2.0, 0.5]);
        assert!(s.data().iter().all(|&x| (x - 0.5).abs() < 1e-6));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let v = random_vol(Dims::new(4, 5, 3), 3);
        assert_eq!(gaussian_smooth(&v, [0.0; 3]), v);
    }

    #[test]
    fn impulse_response_matches_dense_convolution() {
        let d = Dims::new(11, 11, 11);
        let mut data = vec![0.0f32; d.len()];
        data[d.index(5, 5, 5)] = 1.0;
        let v = vol(d, data);
        let s = gaussian_smooth(&v, [1.0; 3]);
        let k = gaussian_kernel(1.0);
        let center = k[3] * k[3] * k[3];
        assert!((s.get(5, 5, 5) as f64 - center).abs() < 1e-7);
        let oracle = dense_gaussian_oracle(&v, 1.0);
        for (a, b) in s.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn random_volume_matches_dense_convolution() {
        let v = random_vol(Dims::new(7, 6, 5), 11);
        let s = gaussian_smooth(&v, [1.0; 3]);
        let oracle = dense_gaussian_oracle(&v, 1.0);
        for (a, b) in s.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn interior_mean_preserved() {
        // A linear ramp is reproduced exactly by a symmetric normalized kernel away from borders.
        let d = Dims::new(20, 20, 20);
        let data = (0..d.len()).map(|i| d.coords(i).x as f32 / 40.0).collect();
        let v = vol(d, data);
        let s = gaussian_smooth(&v, [2.0; 3]);
        for x in 6..14 {
            assert!((s.get(x, 10, 10) - x as f32 / 40.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ball_sizes() {
        assert_eq!(ball_offsets(1).len(), 7);
        assert_eq!(ball_offsets(2).len(), 33);
        assert_eq!(ball_offsets(3).len(), 123);
    }

    #[test]
    fn dilate_single_voxel() {
        let d = Dims::new(5, 5, 5);
        let mut data = vec![0.0f32; d.len()];
        data[d.index(2, 2, 2)] = 1.0;
        let v = vol(d, data);
        let dil = grayscale_dilate(&v, 1);
        assert_eq!(dil.data().iter().filter(|&&x| x == 1.0).count(), 7);
        assert_eq!(dil.data(), brute_rank(&v, 1, true).as_slice());
    }

    #[test]
    fn rank_filters_match_brute_force() {
        for r in 1..=3 {
            let v = random_vol(Dims::new(9, 8, 7), r as u64);
            assert_eq!(grayscale_dilate(&v, r).data(), brute_rank(&v, r, true).as_slice());
            assert_eq!(grayscale_erode(&v, r).data(), brute_rank(&v, r, false).as_slice());
        }
    }

    #[test]
    fn constant_volume_unchanged_by_morphology() {
        let v = ScalarVolume::filled(Dims::new(4, 4, 4), Spacing::ISOTROPIC, 0.3).unwrap();
        assert_eq!(grayscale_dilate(&v, 2), v);
        assert_eq!(iterative_closing(&v, 3), v);
    }

    #[test]
    fn closing_fills_membrane_gap() {
        // Bright plane z = 1 in a 9x9x3 volume with one dark voxel in it.
        let d = Dims::new(9, 9, 3);
        let mut data = vec![0.0f32; d.len()];
        for y in 0..9 {
            for x in 0..9 {
                data[d.index(x, y, 1)] = 1.0;
            }
        }
        data[d.index(4, 4, 1)] = 0.0;
        let v = vol(d, data);
        let closed = iterative_closing(&v, 3);
        assert_eq!(closed.get(4, 4, 1), 1.0);

        // Same result via the brute-force morphology oracle.
        let mut acc = v.clone();
        for r in 1..=3 {
            let dil = v.with_data(brute_rank(&acc, r, true));
            acc = v.with_data(brute_rank(&dil, r, false));
        }
        assert_eq!(closed, acc);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn closing_is_extensive_and_idempotent(seed in any::<u64>(), r in 1usize..3) {
            let v = random_vol(Dims::new(6, 5, 4), seed);
            let dil = grayscale_dilate(&v, r);
            let c = grayscale_erode(&dil, r);
            for (a, b) in c.data().iter().zip(v.data()) {
                prop_assert!(a >= b);
            }
            prop_assert_eq!(closing(&c, r), c.clone());
            let it = iterative_closing(&v, 2);
            for (a, b) in it.data().iter().zip(v.data()) {
                prop_assert!(*a >= *b && *a <= 1.0);
            }
        }

        #[test]
        fn morphology_commutes_with_shift(seed in any::<u64>(), shift in 0.0f32..0.2) {
            let v = random_vol(Dims::new(5, 5, 5), seed);
            let scaled = v.with_data(v.data().iter().map(|x| x * 0.8).collect());
            let shifted = v.with_data(scaled.data().iter().map(|x| x + shift).collect());
            let a = grayscale_dilate(&shifted, 1);
            let b = grayscale_dilate(&scaled, 1);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert_eq!(*x, *y + shift);
            }
        }
    }
}
