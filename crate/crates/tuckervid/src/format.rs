//! Model manifest (JSON) and weight blob (raw little-endian `f32`).
//!
//! Blob layout: 8 magic bytes, `u32` version, `u64` value count, `u32`
//! CRC-32 of the payload, then the payload. Every header field is
//! little-endian. Each weight layer owns one contiguous segment. Convolution
//! kernels are stored `(t, s, i, j, l)` slowest to fastest, linear weights as
//! `(out, in)` row-major, and the bias (if any) follows the weights.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tuckervid_core::network::{Affine, ConvKernel, LayerKind, LayerSpec, NetworkSpec, PoolSpec, VolumeShape};
use tuckervid_core::{DenseTensor, Matrix};

pub const FORMAT_VERSION: u32 = 1;
pub const BLOB_MAGIC: [u8; 8] = *b"TVWBLOB\0";
const HEADER_LEN: usize = 8 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a weight blob (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("weight blob is truncated or has trailing bytes")]
    Length,
    #[error("checksum mismatch: expected {expected:08x}, found {found:08x}")]
    Checksum { expected: u32, found: u32 },
    #[error("layer `{layer}`: {msg}")]
    Layer { layer: String, msg: String },
    #[error(transparent)]
    Core(#[from] tuckervid_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl From<VolumeShape> for InputShape {
    fn from(v: VolumeShape) -> Self {
        Self {
            channels: v.channels,
            frames: v.frames,
            height: v.height,
            width: v.width,
        }
    }
}

impl From<InputShape> for VolumeShape {
    fn from(s: InputShape) -> Self {
        VolumeShape::new(s.frames, s.height, s.width, s.channels)
    }
}

/// Location of a layer's values in the blob, in `f32` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerEntry {
    Conv3d {
        name: String,
        kernel: [usize; 3],
        in_channels: usize,
        out_channels: usize,
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
        #[serde(flatten)]
        segment: Segment,
    },
    Pointwise {
        name: String,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
        #[serde(flatten)]
        segment: Segment,
    },
    Linear {
        name: String,
        inputs: usize,
        outputs: usize,
        bias: bool,
        #[serde(flatten)]
        segment: Segment,
    },
    MaxPool3d {
        name: String,
        window: [usize; 3],
        stride: [usize; 3],
        #[serde(default)]
        ceil_mode: bool,
    },
    Relu {
        name: String,
    },
    Flatten {
        name: String,
    },
}

impl LayerEntry {
    pub fn name(&self) -> &str {
        match self {
            LayerEntry::Conv3d { name, .. }
            | LayerEntry::Pointwise { name, .. }
            | LayerEntry::Linear { name, .. }
            | LayerEntry::MaxPool3d { name, .. }
            | LayerEntry::Relu { name }
            | LayerEntry::Flatten { name } => name,
        }
    }

    pub fn segment(&self) -> Option<Segment> {
        match self {
            LayerEntry::Conv3d { segment, .. }
            | LayerEntry::Pointwise { segment, .. }
            | LayerEntry::Linear { segment, .. } => Some(*segment),
            _ => None,
        }
    }

    /// Number of values the layer's shape calls for.
    fn expected_len(&self) -> usize {
        let b = |bias: bool, n: usize| if bias { n } else { 0 };
        match self {
            LayerEntry::Conv3d {
                kernel,
                in_channels,
                out_channels,
                bias,
                ..
            } => kernel.iter().product::<usize>() * in_channels * out_channels + b(*bias, *out_channels),
            LayerEntry::Pointwise {
                in_channels,
                out_channels,
                bias,
                ..
            } => in_channels * out_channels + b(*bias, *out_channels),
            LayerEntry::Linear {
                inputs, outputs, bias, ..
            } => inputs * outputs + b(*bias, *outputs),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub input: InputShape,
    pub layers: Vec<LayerEntry>,
    /// Total number of `f32` values in the paired blob.
    pub blob_len: usize,
    pub blob_crc32: u32,
}

impl ModelManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelManifest = serde_json::from_str(text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(FormatError::Version(m.format_version));
        }
        m.check_segments()?;
        Ok(m)
    }

    fn check_segments(&self) -> Result<()> {
        let mut next = 0usize;
        for l in &self.layers {
            let Some(seg) = l.segment() else { continue };
            let err = |msg: String| FormatError::Layer {
                layer: l.name().to_string(),
                msg,
            };
            if seg.len != l.expected_len() {
                return Err(err(format!("segment holds {} values, shape needs {}", seg.len, l.expected_len())));
            }
            if seg.offset != next {
                return Err(err(format!("segment starts at {}, expected {next}", seg.offset)));
            }
            next += seg.len;
        }
        if next != self.blob_len {
            return Err(FormatError::Layer {
                layer: "<manifest>".into(),
                msg: format!("segments cover {next} values, blob_len is {}", self.blob_len),
            });
        }
        Ok(())
    }
}

/// Encodes values as a blob with header.
pub fn encode_blob(values: &[f32]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(values.len() * 4);
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&BLOB_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Decodes a blob, returning the values and the payload checksum.
pub fn decode_blob(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Length);
    }
    if bytes[..8] != BLOB_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let crc = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if count.checked_mul(4) != Some(payload.len() as u64) {
        return Err(FormatError::Length);
    }
    let found = crc32fast::hash(payload);
    if found != crc {
        return Err(FormatError::Checksum { expected: crc, found });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((values, crc))
}

/// A network together with its on-disk representation.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub manifest: ModelManifest,
    pub values: Vec<f32>,
}

impl StoredModel {
    /// Serialises `net`. Weights are rounded to `f32`.
    pub fn from_network(net: &NetworkSpec) -> Self {
        let mut values = Vec::new();
        let mut layers = Vec::with_capacity(net.layers.len());
        for l in &net.layers {
            let start = values.len();
            let name = l.name.clone();
            let seg = || Segment {
                offset: start,
                len: 0,
            };
            let entry = match &l.kind {
                LayerKind::Conv3d(k) => {
                    push_kernel(&mut values, k);
                    let sh = k.weights.shape();
                    LayerEntry::Conv3d {
                        name,
                        kernel: [sh[0], sh[1], sh[2]],
                        in_channels: sh[3],
                        out_channels: sh[4],
                        stride: k.stride,
                        padding: k.padding,
                        bias: k.bias.is_some(),
                        segment: seg(),
                    }
                }
                LayerKind::Pointwise(a) => {
                    push_affine(&mut values, a);
                    LayerEntry::Pointwise {
                        name,
                        in_channels: a.inputs(),
                        out_channels: a.outputs(),
                        bias: a.bias.is_some(),
                        segment: seg(),
                    }
                }
                LayerKind::Linear(a) => {
                    push_affine(&mut values, a);
                    LayerEntry::Linear {
                        name,
                        inputs: a.inputs(),
                        outputs: a.outputs(),
                        bias: a.bias.is_some(),
                        segment: seg(),
                    }
                }
                LayerKind::MaxPool3d(p) => LayerEntry::MaxPool3d {
                    name,
                    window: p.window,
                    stride: p.stride,
                    ceil_mode: p.ceil_mode,
                },
                LayerKind::Relu => LayerEntry::Relu { name },
                LayerKind::Flatten => LayerEntry::Flatten { name },
            };
            layers.push(with_len(entry, values.len() - start));
        }
        let blob = encode_blob(&values);
        let crc = u32::from_le_bytes(blob[20..24].try_into().unwrap());
        Self {
            manifest: ModelManifest {
                format_version: FORMAT_VERSION,
                input: net.input.into(),
                layers,
                blob_len: values.len(),
                blob_crc32: crc,
            },
            values,
        }
    }

    /// Parses a manifest/blob pair and checks that they belong together.
    pub fn from_bytes(manifest: &str, blob: &[u8]) -> Result<Self> {
        let manifest = ModelManifest::from_json(manifest)?;
        let (values, crc) = decode_blob(blob)?;
        if crc != manifest.blob_crc32 {
            return Err(FormatError::Checksum {
                expected: manifest.blob_crc32,
                found: crc,
            });
        }
        if values.len() != manifest.blob_len {
            return Err(FormatError::Length);
        }
        Ok(Self { manifest, values })
    }

    pub fn load(manifest: &Path, blob: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| io_err(manifest, e))?;
        let bytes = fs::read(blob).map_err(|e| io_err(blob, e))?;
        Self::from_bytes(&text, &bytes)
    }

    pub fn save(&self, manifest: &Path, blob: &Path) -> Result<()> {
        fs::write(manifest, self.manifest.to_json()).map_err(|e| io_err(manifest, e))?;
        fs::write(blob, encode_blob(&self.values)).map_err(|e| io_err(blob, e))?;
        Ok(())
    }

    pub fn to_network(&self) -> Result<NetworkSpec> {
        build_network(&self.manifest, Some(&self.values))
    }
}

/// Reads a manifest on its own.
pub fn load_manifest(path: &Path) -> Result<ModelManifest> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ModelManifest::from_json(&text)
}

/// Network with the manifest's structure and all weights zero; enough for
/// shape inference and cost accounting.
pub fn structure_only(manifest: &ModelManifest) -> Result<NetworkSpec> {
    build_network(manifest, None)
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn with_len(mut e: LayerEntry, n: usize) -> LayerEntry {
    match &mut e {
        LayerEntry::Conv3d { segment, .. }
        | LayerEntry::Pointwise { segment, .. }
        | LayerEntry::Linear { segment, .. } => segment.len = n,
        _ => {}
    }
    e
}

fn push_kernel(out: &mut Vec<f32>, k: &ConvKernel) {
    let sh = k.weights.shape();
    let (df, dh, dw, s, t) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
    for ti in 0..t {
        for si in 0..s {
            for i in 0..df {
                for j in 0..dh {
                    for l in 0..dw {
                        out.push(k.weights.get(&[i, j, l, si, ti]) as f32);
                    }
                }
            }
        }
    }
    if let Some(b) = &k.bias {
        out.extend(b.iter().map(|&v| v as f32));
    }
}

fn push_affine(out: &mut Vec<f32>, a: &Affine) {
    out.extend(a.weights.data().iter().map(|&v| v as f32));
    if let Some(b) = &a.bias {
        out.extend(b.iter().map(|&v| v as f32));
    }
}

fn build_network(manifest: &ModelManifest, values: Option<&[f32]>) -> Result<NetworkSpec> {
    let fetch = |seg: Segment| -> Vec<f64> {
        match values {
            Some(v) => v[seg.offset..seg.offset + seg.len].iter().map(|&x| f64::from(x)).collect(),
            None => vec![0.0; seg.len],
        }
    };
    let core = |name: &str, e: tuckervid_core::Error| FormatError::Layer {
        layer: name.to_string(),
        msg: e.to_string(),
    };
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let name = entry.name();
        let kind = match entry {
            LayerEntry::Conv3d {
                kernel,
                in_channels: s,
                out_channels: t,
                stride,
                padding,
                bias,
                segment,
                ..
            } => {
                let data = fetch(*segment);
                let [df, dh, dw] = *kernel;
                let n = df * dh * dw * s * t;
                let w = DenseTensor::from_fn(vec![df, dh, dw, *s, *t], |ix| {
                    let (i, j, l, si, ti) = (ix[0], ix[1], ix[2], ix[3], ix[4]);
                    data[(((ti * s + si) * df + i) * dh + j) * dw + l]
                })
                .map_err(|e| core(name, e))?;
                let b = bias.then(|| data[n..].to_vec());
                LayerKind::Conv3d(ConvKernel::new(w, *stride, *padding, b).map_err(|e| core(name, e))?)
            }
            LayerEntry::Pointwise {
                in_channels,
                out_channels,
                bias,
                segment,
                ..
            } => LayerKind::Pointwise(affine(fetch(*segment), *in_channels, *out_channels, *bias).map_err(|e| core(name, e))?),
            LayerEntry::Linear {
                inputs,
                outputs,
                bias,
                segment,
                ..
            } => LayerKind::Linear(affine(fetch(*segment), *inputs, *outputs, *bias).map_err(|e| core(name, e))?),
            LayerEntry::MaxPool3d {
                window,
                stride,
                ceil_mode,
                ..
            } => LayerKind::MaxPool3d(PoolSpec {
                window: *window,
                stride: *stride,
                ceil_mode: *ceil_mode,
            }),
            LayerEntry::Relu { .. } => LayerKind::Relu,
            LayerEntry::Flatten { .. } => LayerKind::Flatten,
        };
        layers.push(LayerSpec::new(name, kind));
    }
    Ok(NetworkSpec::new(manifest.input.into(), layers)?)
}

fn affine(mut data: Vec<f64>, inputs: usize, outputs: usize, bias: bool) -> tuckervid_core::Result<Affine> {
    let b = bias.then(|| data.split_off(inputs * outputs));
    Affine::new(Matrix::new(outputs, inputs, data)?, b)
}

/// Writes a single tensor (e.g. a benchmark input) in the blob format.
pub fn save_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let values: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
    fs::write(path, encode_blob(&values)).map_err(|e| io_err(path, e))
}

/// Reads a tensor of the given shape from a blob file.
pub fn load_tensor(path: &Path, shape: &[usize]) -> Result<DenseTensor> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (values, _) = decode_blob(&bytes)?;
    let data = values.into_iter().map(f64::from).collect();
    Ok(DenseTensor::new(shape.to_vec(), data)?)
}
