//! MVOL reader/writer.
//!
//! A volume is stored as two files: `<name>.mvol.json`, a JSON header with the
//! keys `dims`, `spacing`, `dtype` and `data`, and the raw payload named by
//! `data` (relative to the header). The payload is little-endian, x-fastest,
//! without padding.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dims, LabelVolume, ScalarVolume, Spacing};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    U32,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::U32 | Dtype::F32 => 4,
        }
    }

    fn parse(s: &str) -> Option<Dtype> {
        match s {
            "u8" => Some(Dtype::U8),
            "u16" => Some(Dtype::U16),
            "u32" => Some(Dtype::U32),
            "f32" => Some(Dtype::F32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvolHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl Volume {
    pub fn into_scalar(self) -> Result<ScalarVolume> {
        match self {
            Volume::Scalar(v) => Ok(v),
            Volume::Label(_) => Err(Error::Unsupported(
                "expected an intensity volume, found a u32 label volume".into(),
            )),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            Volume::Label(v) => Ok(v),
            Volume::Scalar(_) => Err(Error::Unsupported(
                "expected a u32 label volume, found an intensity volume".into(),
            )),
        }
    }
}

impl From<ScalarVolume> for Volume {
    fn from(v: ScalarVolume) -> Self {
        Volume::Scalar(v)
    }
}

impl From<LabelVolume> for Volume {
    fn from(v: LabelVolume) -> Self {
        Volume::Label(v)
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_header(path: &Path, text: &str) -> Result<MvolHeader> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| format_err(path, "header is not a JSON object"))?;

    let dtype_str = obj
        .get("dtype")
        .and_then(|d| d.as_str())
        .ok_or_else(|| format_err(path, "missing string key `dtype`"))?;
    let dtype = Dtype::parse(dtype_str)
        .ok_or_else(|| Error::Unsupported(format!("dtype `{dtype_str}` in {}", path.display())))?;

    let dims = obj
        .get("dims")
        .and_then(|d| serde_json::from_value::<[usize; 3]>(d.clone()).ok())
        .ok_or_else(|| format_err(path, "`dims` must be three non-negative integers"))?;
    if dims.contains(&0) {
        return Err(format_err(path, "`dims` must be positive"));
    }
    let spacing = obj
        .get("spacing")
        .and_then(|s| serde_json::from_value::<[f64; 3]>(s.clone()).ok())
        .ok_or_else(|| format_err(path, "`spacing` must be three numbers"))?;
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(format_err(path, "`spacing` must be positive and finite"));
    }
    let data = obj
        .get("data")
        .and_then(|d| d.as_str())
        .ok_or_else(|| format_err(path, "missing string key `data`"))?
        .to_string();

    Ok(MvolHeader {
        dims,
        spacing,
        dtype,
        data,
    })
}

/// Reads an MVOL pair given the path to its `.mvol.json` header.
///
/// u8/u16/f32 payloads are returned as raw (not normalized) intensities; u32
/// payloads become a [`LabelVolume`].
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &text)?;
    let payload_path = path.parent().unwrap_or_else(|| Path::new("")).join(&header.data);
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;

    let dims = Dims::new(header.dims[0], header.dims[1], header.dims[2]);
    let n = dims.len();
    let expected = n
        .checked_mul(header.dtype.size())
        .ok_or_else(|| format_err(path, "volume too large"))?;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: payload_path,
            expected,
            found: bytes.len(),
        });
    }
    let spacing = Spacing(header.spacing);

    let volume = match header.dtype {
        Dtype::U8 => Volume::Scalar(ScalarVolume::new(
            dims,
            spacing,
            bytes.iter().map(|&b| b as f32).collect(),
        )?),
        Dtype::U16 => Volume::Scalar(ScalarVolume::new(
            dims,
            spacing,
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
                .collect(),
        )?),
        Dtype::F32 => Volume::Scalar(ScalarVolume::new(
            dims,
            spacing,
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )?),
        Dtype::U32 => Volume::Label(LabelVolume::new(
            dims,
            spacing,
            bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )?),
    };
    Ok(volume)
}

/// Payload file name for a header path: `cells.mvol.json` -> `cells.raw`.
fn payload_name(header_path: &Path) -> Result<String> {
    let file = header_path.file_name().and_then(|f| f.to_str()).ok_or_else(|| {
        Error::io(
            header_path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a file path"),
        )
    })?;
    let stem = file
        .strip_suffix(".mvol.json")
        .or_else(|| file.strip_suffix(".json"))
        .unwrap_or(file);
    Ok(format!("{stem}.raw"))
}

fn write_pair(path: &Path, dims: Dims, spacing: Spacing, dtype: Dtype, payload: &[u8]) -> Result<()> {
    let data = payload_name(path)?;
    let header = MvolHeader {
        dims: dims.as_array(),
        spacing: spacing.0,
        dtype,
        data: data.clone(),
    };
    let payload_path: PathBuf = path.parent().unwrap_or_else(|| Path::new("")).join(&data);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    fs::write(&payload_path, payload).map_err(|e| Error::io(&payload_path, e))?;
    Ok(())
}

/// Writes a volume as an MVOL pair. Intensity volumes are stored as f32, label
/// volumes as u32. `path` is the header path; the payload lands next to it.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    match v {
        Volume::Scalar(s) => write_scalar_as(s, path, Dtype::F32),
        Volume::Label(l) => {
            let mut payload = Vec::with_capacity(l.labels().len() * 4);
            for &x in l.labels() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
            write_pair(path.as_ref(), l.dims(), l.spacing(), Dtype::U32, &payload)
        }
    }
}

/// Writes an intensity volume with an explicit integer or float dtype. Integer
/// dtypes require every sample to be an in-range whole number.
pub fn write_scalar_as(v: &ScalarVolume, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let data = v.data();
    let check_int = |max: f32| -> Result<()> {
        match data.iter().find(|&&x| !(x >= 0.0 && x <= max && x.fract() == 0.0)) {
            Some(bad) => Err(Error::Param(format!("value {bad} is not representable as {dtype:?}"))),
            None => Ok(()),
        }
    };
    let payload: Vec<u8> = match dtype {
        Dtype::U8 => {
            check_int(u8::MAX as f32)?;
            data.iter().map(|&x| x as u8).collect()
        }
        Dtype::U16 => {
            check_int(u16::MAX as f32)?;
            data.iter().flat_map(|&x| (x as u16).to_le_bytes()).collect()
        }
        Dtype::F32 => data.iter().flat_map(|&x| x.to_le_bytes()).collect(),
        Dtype::U32 => return Err(Error::Unsupported("u32 is reserved for label volumes".into())),
    };
    write_pair(path, v.dims(), v.spacing(), dtype, &payload)
}
