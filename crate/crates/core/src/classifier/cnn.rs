//! Two conv/pool stages, one hidden dense layer and a softmax output, in
//! double precision. Convolutions lower each output z-plane to a matrix
//! product (im2col) so the heavy lifting goes through a tuned GEMM.

use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassProbs, Patch, PatchClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    /// Input cube side; must be divisible by 4.
    pub side: usize,
    /// Odd convolution kernel side.
    pub kernel: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub fc: usize,
    pub classes: usize,
}

const TENSOR_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "out.weight",
    "out.bias",
];

impl CnnArch {
    /// 32³ input, two 5³ convolutions with 32 and 64 channels, 1024 dense units.
    pub const STANDARD: CnnArch = CnnArch {
        side: 32,
        kernel: 5,
        conv1: 32,
        conv2: 64,
        fc: 1024,
        classes: 3,
    };

    /// Same layer types on a 4³ input; small enough for finite differences.
    pub const TINY: CnnArch = CnnArch {
        side: 4,
        kernel: 5,
        conv1: 2,
        conv2: 3,
        fc: 4,
        classes: 3,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.side >= 4
            && self.side.is_multiple_of(4)
            && self.kernel % 2 == 1
            && self.conv1 > 0
            && self.conv2 > 0
            && self.fc > 0
            && self.classes == 3;
        if !ok {
            return Err(Error::Param(format!("invalid network architecture {self:?}")));
        }
        Ok(())
    }

    fn k3(&self) -> usize {
        self.kernel.pow(3)
    }

    pub fn flat_len(&self) -> usize {
        self.conv2 * (self.side / 4).pow(3)
    }

    /// Activation shapes from input to logits, channels first.
    pub fn shape_flow(&self) -> Vec<Vec<usize>> {
        let (s, h, q) = (self.side, self.side / 2, self.side / 4);
        vec![
            vec![1, s, s, s],
            vec![self.conv1, h, h, h],
            vec![self.conv2, q, q, q],
            vec![self.flat_len()],
            vec![self.fc],
            vec![self.classes],
        ]
    }

    pub fn tensor_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let k = self.kernel;
        let shapes = [
            vec![self.conv1, 1, k, k, k],
            vec![self.conv1],
            vec![self.conv2, self.conv1, k, k, k],
            vec![self.conv2],
            vec![self.fc, self.flat_len()],
            vec![self.fc],
            vec![self.classes, self.fc],
            vec![self.classes],
        ];
        TENSOR_NAMES.into_iter().zip(shapes).collect()
    }

    fn ranges(&self) -> [Range<usize>; 8] {
        let mut start = 0;
        let shapes = self.tensor_shapes();
        std::array::from_fn(|t| {
            let len: usize = shapes[t].1.iter().product();
            let r = start..start + len;
            start += len;
            r
        })
    }

    pub fn param_count(&self) -> usize {
        self.ranges()[7].end
    }

    fn fan_in(&self, tensor: usize) -> usize {
        match tensor {
            0 => self.k3(),
            2 => self.conv1 * self.k3(),
            4 => self.flat_len(),
            6 => self.fc,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: CnnArch,
    /// All tensors concatenated in [`CnnArch::tensor_shapes`] order.
    pub params: Vec<f64>,
    pub seed: u64,
    /// Whether inputs have non-hypothesis voxels zeroed.
    pub masked_input: bool,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    arch: CnnArch,
    seed: u64,
    precision: String,
    masked_input: bool,
    tensors: Vec<TensorHeader>,
}

const MODEL_FORMAT: &str = "svseg-cnn-v1";

impl CnnModel {
    pub fn zeros(arch: CnnArch) -> Result<Self> {
        arch.validate()?;
        Ok(CnnModel {
            arch,
            params: vec![0.0; arch.param_count()],
            seed: 0,
            masked_input: false,
        })
    }

    /// He initialization of the weights (normal, variance 2 / fan-in); zero biases.
    pub fn init(arch: CnnArch, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        m.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (t, r) in arch.ranges().into_iter().enumerate() {
            if t % 2 == 0 {
                let normal =
                    Normal::new(0.0, (2.0 / arch.fan_in(t) as f64).sqrt()).map_err(|e| Error::Param(e.to_string()))?;
                for p in &mut m.params[r] {
                    *p = normal.sample(&mut rng);
                }
            }
        }
        Ok(m)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = TENSOR_NAMES.iter().position(|&n| n == name)?;
        Some(&self.params[self.arch.ranges()[t].clone()])
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("model has non-finite parameters".into()));
        }
        Ok(())
    }

    /// One JSON header line followed by the little-endian f64 parameters.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            arch: self.arch,
            seed: self.seed,
            precision: "f64".into(),
            masked_input: self.masked_input,
            tensors: self
                .arch
                .tensor_shapes()
                .into_iter()
                .map(|(n, s)| TensorHeader {
                    name: n.into(),
                    shape: s,
                })
                .collect(),
        };
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let json = serde_json::to_string(&header).expect("header serializes");
        f.write_all(json.as_bytes()).map_err(io)?;
        f.write_all(b"\n").map_err(io)?;
        for p in &self.params {
            f.write_all(&p.to_le_bytes()).map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut f = BufReader::new(std::fs::File::open(path).map_err(io)?);
        let mut line = String::new();
        f.read_line(&mut line).map_err(io)?;
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let header: ModelHeader = serde_json::from_str(line.trim_end()).map_err(|e| format(e.to_string()))?;
        if header.format != MODEL_FORMAT || header.precision != "f64" {
            return Err(Error::Unsupported(format!(
                "model format {} / precision {}",
                header.format, header.precision
            )));
        }
        header.arch.validate()?;
        let expected: Vec<(String, Vec<usize>)> = header
            .arch
            .tensor_shapes()
            .into_iter()
            .map(|(n, s)| (n.to_string(), s))
            .collect();
        let declared: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
        if declared != expected {
            return Err(format("tensor list does not match the architecture".into()));
        }
        let n = header.arch.param_count();
        let mut bytes = Vec::with_capacity(n * 8);
        f.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() != n * 8 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: n * 8,
                found: bytes.len(),
            });
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(CnnModel {
            arch: header.arch,
            params,
            seed: header.seed,
            masked_input: header.masked_input,
        })
    }
}

/// `C = A·B + beta·C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, c: usize, rs: usize, cs: usize| (r - 1) * rs + (c - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Column matrix for output plane `z`: row `ci·k³ + (kz·k + ky)·k + kx`,
/// column `y·n + x`, zero outside the input.
fn im2col(input: &[f64], cin: usize, n: usize, k: usize, z: usize, col: &mut [f64]) {
    let p = (k / 2) as isize;
    let n2 = n * n;
    let mut row = 0;
    for ci in 0..cin {
        let chan = &input[ci * n2 * n..(ci + 1) * n2 * n];
        for kz in 0..k {
            let iz = z as isize + kz as isize - p;
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut col[row * n2..(row + 1) * n2];
                    row += 1;
                    if iz < 0 || iz >= n as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let dx = kx as isize - p;
                    let (x0, x1) = ((-dx).max(0) as usize, (n as isize - dx).min(n as isize) as usize);
                    for y in 0..n {
                        let iy = y as isize + ky as isize - p;
                        let out = &mut dst[y * n..(y + 1) * n];
                        if iy < 0 || iy >= n as isize || x0 >= x1 {
                            out.fill(0.0);
                            continue;
                        }
                        let base = iz as usize * n2 + iy as usize * n;
                        out[..x0].fill(0.0);
                        out[x1..].fill(0.0);
                        let src = (base as isize + x0 as isize + dx) as usize;
                        out[x0..x1].copy_from_slice(&chan[src..src + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds the column matrix back into `din`.
fn col2im_add(col: &[f64], cin: usize, n: usize, k: usize, z: usize, din: &mut [f64]) {
    let p = (k / 2) as isize;
    let n2 = n * n;
    let mut row = 0;
    for ci in 0..cin {
        let chan = &mut din[ci * n2 * n..(ci + 1) * n2 * n];
        for kz in 0..k {
            let iz = z as isize + kz as isize - p;
            for ky in 0..k {
                for kx in 0..k {
                    let src = &col[row * n2..(row + 1) * n2];
                    row += 1;
                    if iz < 0 || iz >= n as isize {
                        continue;
                    }
                    let dx = kx as isize - p;
                    let (x0, x1) = ((-dx).max(0) as usize, (n as isize - dx).min(n as isize) as usize);
                    for y in 0..n {
                        let iy = y as isize + ky as isize - p;
                        if iy < 0 || iy >= n as isize || x0 >= x1 {
                            continue;
                        }
                        let base = (iz as usize * n2 + iy as usize * n) as isize + dx;
                        for x in x0..x1 {
                            chan[(base + x as isize) as usize] += src[y * n + x];
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded 3D convolution of a `cin × n³` input into `cout × n³`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3d(input: &[f64], cin: usize, n: usize, w: &[f64], b: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let (n2, n3, rows) = (n * n, n * n * n, cin * k * k * k);
    let mut out = vec![0.0; cout * n3];
    let mut col = vec![0.0; rows * n2];
    for z in 0..n {
        im2col(input, cin, n, k, z, &mut col);
        gemm(
            cout,
            rows,
            n2,
            w,
            (rows, 1),
            &col,
            (n2, 1),
            0.0,
            &mut out[z * n2..],
            (n3, 1),
        );
    }
    for (co, chan) in out.chunks_exact_mut(n3).enumerate() {
        chan.iter_mut().for_each(|x| *x += b[co]);
    }
    out
}

/// Gradients of [`conv3d`]; accumulates into `dw`, `db` and, if given, `din`.
#[allow(clippy::too_many_arguments)]
fn conv3d_backward(
    input: &[f64],
    cin: usize,
    n: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let (n2, n3, rows) = (n * n, n * n * n, cin * k * k * k);
    let mut col = vec![0.0; rows * n2];
    let mut dcol = vec![0.0; rows * n2];
    for z in 0..n {
        im2col(input, cin, n, k, z, &mut col);
        let dplane = &dout[z * n2..];
        gemm(cout, n2, rows, dplane, (n3, 1), &col, (1, n2), 1.0, dw, (rows, 1));
        if let Some(din) = din.as_deref_mut() {
            gemm(rows, cout, n2, w, (1, rows), dplane, (n3, 1), 0.0, &mut dcol, (n2, 1));
            col2im_add(&dcol, cin, n, k, z, din);
        }
    }
    for (co, chan) in dout.chunks_exact(n3).enumerate() {
        db[co] += chan.iter().sum::<f64>();
    }
}

/// 2³ max pooling with stride 2; returns the pooled values and the input
/// index of each maximum (first one on ties).
fn maxpool(input: &[f64], c: usize, n: usize) -> (Vec<f64>, Vec<u32>) {
    let h = n / 2;
    let mut out = Vec::with_capacity(c * h * h * h);
    let mut idx = Vec::with_capacity(c * h * h * h);
    for ch in 0..c {
        let base = ch * n * n * n;
        for z in 0..h {
            for y in 0..h {
                for x in 0..h {
                    let mut best = (f64::NEG_INFINITY, 0usize);
                    for (dz, dy, dx) in (0..8).map(|o| (o >> 2 & 1, o >> 1 & 1, o & 1)) {
                        let i = base + ((2 * z + dz) * n + 2 * y + dy) * n + 2 * x + dx;
                        if input[i] > best.0 {
                            best = (input[i], i);
                        }
                    }
                    out.push(best.0);
                    idx.push(best.1 as u32);
                }
            }
        }
    }
    (out, idx)
}

/// Dot product with eight independent accumulators so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    idx1: Vec<u32>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    idx2: Vec<u32>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    dropout: Option<Vec<f64>>,
    dropped: Vec<f64>,
    pub logits: [f64; 3],
    pub probs: ClassProbs,
}

impl ForwardCache {
    /// Cross-entropy of the cached prediction against `label`.
    pub fn loss(&self, label: PatchClass) -> f64 {
        -self.probs.as_array()[label.index()].max(f64::MIN_POSITIVE).ln()
    }
}

/// Forward pass. `dropout` holds one multiplier per hidden unit (0 or
/// 1/keep for inverted dropout); `None` is inference.
pub fn forward_with(model: &CnnModel, input: &[f64], dropout: Option<&[f64]>) -> Result<ForwardCache> {
    let a = model.arch;
    let r = a.ranges();
    let p = &model.params;
    let n = a.side;
    if input.len() != n * n * n {
        return Err(Error::DimsMismatch(format!(
            "network expects {n}³ inputs, got {} values",
            input.len()
        )));
    }
    let mut a1 = conv3d(input, 1, n, &p[r[0].clone()], &p[r[1].clone()], a.conv1, a.kernel);
    relu(&mut a1);
    let (p1, idx1) = maxpool(&a1, a.conv1, n);
    let mut a2 = conv3d(
        &p1,
        a.conv1,
        n / 2,
        &p[r[2].clone()],
        &p[r[3].clone()],
        a.conv2,
        a.kernel,
    );
    relu(&mut a2);
    let (flat, idx2) = maxpool(&a2, a.conv2, n / 2);

    let fc1 = &p[r[4].clone()];
    let mut hidden: Vec<f64> = p[r[5].clone()]
        .iter()
        .zip(fc1.chunks_exact(flat.len()))
        .map(|(b, row)| b + dot(row, &flat))
        .collect();
    relu(&mut hidden);
    let dropped: Vec<f64> = match dropout {
        Some(m) => hidden.iter().zip(m).map(|(h, m)| h * m).collect(),
        None => hidden.clone(),
    };
    let mut logits = [0.0; 3];
    let (ow, ob) = (&p[r[6].clone()], &p[r[7].clone()]);
    for c in 0..3 {
        logits[c] = ob[c]
            + ow[c * a.fc..(c + 1) * a.fc]
                .iter()
                .zip(&dropped)
                .map(|(w, h)| w * h)
                .sum::<f64>();
    }
    let probs = ClassProbs::from_logits(logits)?;
    Ok(ForwardCache {
        input: input.to_vec(),
        a1,
        idx1,
        p1,
        a2,
        idx2,
        flat,
        hidden,
        dropout: dropout.map(<[f64]>::to_vec),
        dropped,
        logits,
        probs,
    })
}

/// Inference on one patch with dropout off.
pub fn forward(model: &CnnModel, patch: &Patch) -> Result<ClassProbs> {
    model.check_finite()?;
    if patch.side() != model.arch.side {
        return Err(Error::DimsMismatch(format!(
            "patch side {} does not match network input {}",
            patch.side(),
            model.arch.side
        )));
    }
    let input: Vec<f64> = patch.data().iter().map(|&x| x as f64).collect();
    Ok(forward_with(model, &input, None)?.probs)
}

/// Backpropagates the cross-entropy of `cache` against `label`, adding the
/// parameter gradient into `grad`. Returns the loss.
pub fn backward(model: &CnnModel, cache: &ForwardCache, label: PatchClass, grad: &mut [f64]) -> f64 {
    backward_impl(model, cache, label, grad, None)
}

/// Hidden-layer deltas and inputs of a minibatch, so the dense weight
/// gradient is formed by one matrix product instead of one outer product
/// per sample.
struct DenseDeferral {
    deltas: Vec<f64>,
    inputs: Vec<f64>,
    rows: usize,
}

impl DenseDeferral {
    fn new() -> Self {
        DenseDeferral {
            deltas: Vec::new(),
            inputs: Vec::new(),
            rows: 0,
        }
    }

    fn flush(&mut self, arch: CnnArch, grad: &mut [f64]) {
        if self.rows > 0 {
            let (fc, flat) = (arch.fc, arch.flat_len());
            let r = arch.ranges()[4].clone();
            gemm(
                fc,
                self.rows,
                flat,
                &self.deltas,
                (1, fc),
                &self.inputs,
                (flat, 1),
                1.0,
                &mut grad[r],
                (flat, 1),
            );
        }
        self.deltas.clear();
        self.inputs.clear();
        self.rows = 0;
    }
}

fn backward_impl(
    model: &CnnModel,
    cache: &ForwardCache,
    label: PatchClass,
    grad: &mut [f64],
    defer: Option<&mut DenseDeferral>,
) -> f64 {
    let a = model.arch;
    let r = a.ranges();
    let p = &model.params;
    let n = a.side;
    let (fc, flat_len) = (a.fc, a.flat_len());

    let mut dlogits = cache.probs.as_array();
    dlogits[label.index()] -= 1.0;

    let ow = &p[r[6].clone()];
    for c in 0..3 {
        grad[r[7].start + c] += dlogits[c];
        let g = &mut grad[r[6].start + c * fc..r[6].start + (c + 1) * fc];
        g.iter_mut().zip(&cache.dropped).for_each(|(g, h)| *g += dlogits[c] * h);
    }
    let mut dhidden: Vec<f64> = (0..fc)
        .map(|j| (0..3).map(|c| dlogits[c] * ow[c * fc + j]).sum::<f64>())
        .collect();
    if let Some(m) = &cache.dropout {
        dhidden.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
    }
    dhidden.iter_mut().zip(&cache.hidden).for_each(|(d, &h)| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    grad[r[5].clone()].iter_mut().zip(&dhidden).for_each(|(g, d)| *g += d);
    match defer {
        Some(d) => {
            d.deltas.extend_from_slice(&dhidden);
            d.inputs.extend_from_slice(&cache.flat);
            d.rows += 1;
        }
        None => gemm(
            fc,
            1,
            flat_len,
            &dhidden,
            (1, 1),
            &cache.flat,
            (1, 1),
            1.0,
            &mut grad[r[4].clone()],
            (flat_len, 1),
        ),
    }
    let mut dflat = vec![0.0; flat_len];
    for (&d, row) in dhidden.iter().zip(p[r[4].clone()].chunks_exact(flat_len)) {
        if d != 0.0 {
            dflat.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
        }
    }

    let h = n / 2;
    let mut da2 = vec![0.0; cache.a2.len()];
    for (d, &i) in dflat.iter().zip(&cache.idx2) {
        da2[i as usize] += d;
    }
    da2.iter_mut().zip(&cache.a2).for_each(|(d, &v)| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    let mut dp1 = vec![0.0; cache.p1.len()];
    {
        let (head, tail) = grad.split_at_mut(r[3].start);
        conv3d_backward(
            &cache.p1,
            a.conv1,
            h,
            &p[r[2].clone()],
            a.conv2,
            a.kernel,
            &da2,
            &mut head[r[2].clone()],
            &mut tail[..r[3].len()],
            Some(&mut dp1),
        );
    }
    let mut da1 = vec![0.0; cache.a1.len()];
    for (d, &i) in dp1.iter().zip(&cache.idx1) {
        da1[i as usize] += d;
    }
    da1.iter_mut().zip(&cache.a1).for_each(|(d, &v)| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    let (head, tail) = grad.split_at_mut(r[1].start);
    conv3d_backward(
        &cache.input,
        1,
        n,
        &p[r[0].clone()],
        a.conv1,
        a.kernel,
        &da1,
        &mut head[r[0].clone()],
        &mut tail[..r[1].len()],
        None,
    );
    cache.loss(label)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Probability of keeping a hidden unit during training.
    pub keep_prob: f64,
    pub seed: u64,
    pub masked_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 5,
            epochs: 30,
            keep_prob: 0.5,
            seed: 0,
            masked_input: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.keep_prob > 0.0
            && self.keep_prob <= 1.0;
        if !ok {
            return Err(Error::Param(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` along `grad`.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CnnModel,
    /// Mean cross-entropy over the whole set before the first update, dropout off.
    pub initial_loss: f64,
    /// Mean minibatch cross-entropy of each epoch, dropout on.
    pub epoch_losses: Vec<f64>,
    /// Mean cross-entropy over the whole set after training, dropout off.
    pub final_loss: f64,
}

impl TrainOutcome {
    /// Plain-text loss trace, one `label value` pair per line.
    pub fn trace_text(&self) -> String {
        let mut s = format!("initial {:e}\n", self.initial_loss);
        for (e, l) in self.epoch_losses.iter().enumerate() {
            s += &format!("epoch{} {:e}\n", e + 1, l);
        }
        s + &format!("final {:e}\n", self.final_loss)
    }
}

fn to_input(p: &Patch) -> Vec<f64> {
    p.data().iter().map(|&x| x as f64).collect()
}

/// Mean cross-entropy over `data` with dropout off.
pub fn mean_loss(model: &CnnModel, data: &[(Patch, PatchClass)]) -> Result<f64> {
    let mut total = 0.0;
    for (p, c) in data {
        total += forward_with(model, &to_input(p), None)?.loss(*c);
    }
    Ok(total / data.len() as f64)
}

/// Minibatch Adam on the mean cross-entropy. Runs on the calling thread
/// and is bit-reproducible for a given seed.
pub fn train(data: &[(Patch, PatchClass)], arch: CnnArch, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    for class in PatchClass::ALL {
        if !data.iter().any(|(_, c)| *c == class) {
            return Err(Error::Data(format!("training set has no {} examples", class.name())));
        }
    }
    let mut model = CnnModel::init(arch, cfg.seed)?;
    model.masked_input = cfg.masked_input;
    let inputs: Vec<Vec<f64>> = data.iter().map(|(p, _)| to_input(p)).collect();
    if inputs.iter().any(|x| x.len() != arch.side.pow(3)) {
        return Err(Error::DimsMismatch(format!("training patches must be {}³", arch.side)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut deferred = DenseDeferral::new();
    let initial_loss = mean_loss(&model, data)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let mask: Vec<f64> = (0..arch.fc)
                    .map(|_| {
                        if rng.random::<f64>() < cfg.keep_prob {
                            1.0 / cfg.keep_prob
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let cache = forward_with(&model, &inputs[i], Some(&mask))?;
                epoch_total += backward_impl(&model, &cache, data[i].1, &mut grad, Some(&mut deferred));
            }
            deferred.flush(arch, &mut grad);
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut model.params, &grad, &mut adam, cfg);
        }
        let epoch_loss = epoch_total / data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numeric("training loss diverged".into()));
        }
        log::debug!("epoch {} loss {epoch_loss:.6}", epoch_losses.len() + 1);
        epoch_losses.push(epoch_loss);
    }
    let final_loss = mean_loss(&model, data)?;
    Ok(TrainOutcome {
        model,
        initial_loss,
        epoch_losses,
        final_loss,
    })
}
