//! Binary containers for float weight bundles (`.ptqb`) and quantized
//! models (`.ptqq`).
//!
//! Both share one envelope:
//!
//! | bytes        | content                                         |
//! |--------------|-------------------------------------------------|
//! | 0..4         | magic, `PTQB` or `PTQQ`                         |
//! | 4..8         | format version, u32 little-endian (1)           |
//! | 8..16        | header length `H`, u64 little-endian            |
//! | 16..16+H     | UTF-8 JSON header                               |
//! | 16+H..       | payload; header offsets are relative to here    |
//!
//! Bundle payloads hold raw little-endian f32 tensors, concatenated in
//! tensor-name order. Quantized payloads hold, per layer, the packed code
//! stream followed by the region bitmask (see [`crate::bitpack`]).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitpack::MAX_FIELD_BITS;

pub const BUNDLE_MAGIC: [u8; 4] = *b"PTQB";
pub const QUANTIZED_MAGIC: [u8; 4] = *b"PTQQ";
pub const FORMAT_VERSION: u32 = 1;
/// Magic + version + header length.
pub const ENVELOPE_PREFIX_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated payload in {what}: need {needed} bytes, have {available}")]
    Truncated {
        what: String,
        needed: u64,
        available: u64,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("tensor {tensor}: {detail}")]
    ShapeMismatch { tensor: String, detail: String },
    #[error("tensor {tensor}: non-finite value {value} at index {index}")]
    NonFinite {
        tensor: String,
        index: usize,
        value: f32,
    },
    #[error("layer {layer}: {detail}")]
    InvalidLayer { layer: usize, detail: String },
    #[error("layer {layer}: {stream} stream declares {declared} bits, expected {expected}")]
    BitstreamLength {
        layer: usize,
        stream: &'static str,
        declared: u64,
        expected: u64,
    },
}

pub type StoreResult<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DType {
    #[default]
    #[serde(rename = "f32")]
    F32,
}

/// Structural description of one quantizable layer.
///
/// `m` is the number of output channels, `n` the input channels seen by one
/// output channel (1 for depthwise convolutions), `k` the kernel side. Fully
/// connected layers use `k = 1` and are sliced into channels like 1x1
/// convolutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub layer_index: usize,
    pub kind: LayerKind,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub tensor_name: String,
}

impl LayerDescriptor {
    pub fn expected_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.m, self.n, self.k, self.k],
            LayerKind::Fc => vec![self.m, self.n],
        }
    }

    pub fn weights_per_channel(&self) -> usize {
        self.n * self.k * self.k
    }

    pub fn weight_count(&self) -> usize {
        self.m * self.weights_per_channel()
    }

    fn check_dims(&self) -> StoreResult<()> {
        let bad = |detail: String| StoreError::InvalidLayer {
            layer: self.layer_index,
            detail,
        };
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(bad(format!(
                "dimensions must be positive (m={}, n={}, k={})",
                self.m, self.n, self.k
            )));
        }
        if self.kind == LayerKind::Fc && self.k != 1 {
            return Err(bad(format!("fc layer must have k=1, got {}", self.k)));
        }
        Ok(())
    }
}

/// A named float32 tensor in row-major order.
#[derive(Debug, Clone)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub data: Vec<f32>,
}

impl PartialEq for TensorRecord {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.dtype == other.dtype
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TensorRecord {
    /// Builds a tensor, checking the length contract and finiteness.
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> StoreResult<Self> {
        let t = Self {
            name: name.into(),
            shape,
            dtype: DType::F32,
            data,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> StoreResult<()> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(StoreError::ShapeMismatch {
                tensor: self.name.clone(),
                detail: format!("shape {:?} must have positive dimensions", self.shape),
            });
        }
        if self.data.len() != self.element_count() {
            return Err(StoreError::ShapeMismatch {
                tensor: self.name.clone(),
                detail: format!(
                    "shape {:?} needs {} values, data has {}",
                    self.shape,
                    self.element_count(),
                    self.data.len()
                ),
            });
        }
        if let Some((index, &value)) = self.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                tensor: self.name.clone(),
                index,
                value,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelBundle {
    pub model_name: String,
    pub layers: Vec<LayerDescriptor>,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl ModelBundle {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    /// Appends a layer with a conventionally named tensor (`layerNNNN.weight`).
    pub fn push_layer(
        &mut self,
        kind: LayerKind,
        m: usize,
        n: usize,
        k: usize,
        data: Vec<f32>,
    ) -> StoreResult<&LayerDescriptor> {
        let layer_index = self.layers.len();
        let layer = LayerDescriptor {
            layer_index,
            kind,
            m,
            n,
            k,
            tensor_name: format!("layer{layer_index:04}.weight"),
        };
        layer.check_dims()?;
        let tensor = TensorRecord::new(layer.tensor_name.clone(), layer.expected_shape(), data)?;
        self.tensors.insert(tensor.name.clone(), tensor);
        self.layers.push(layer);
        Ok(&self.layers[layer_index])
    }

    pub fn tensor_for(&self, layer: &LayerDescriptor) -> Option<&TensorRecord> {
        self.tensors.get(&layer.tensor_name)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerDescriptor::weight_count).sum()
    }

    pub fn validate(&self) -> StoreResult<()> {
        for tensor in self.tensors.values() {
            tensor.validate()?;
        }
        let mut claimed = BTreeMap::new();
        for (pos, layer) in self.layers.iter().enumerate() {
            if layer.layer_index != pos {
                return Err(StoreError::InvalidLayer {
                    layer: layer.layer_index,
                    detail: format!("layer_index must be {pos} (indices are 0..L-1 in order)"),
                });
            }
            layer.check_dims()?;
            let tensor = self.tensors.get(&layer.tensor_name).ok_or_else(|| {
                StoreError::InvalidLayer {
                    layer: pos,
                    detail: format!("tensor {} not found", layer.tensor_name),
                }
            })?;
            if let Some(prev) = claimed.insert(layer.tensor_name.as_str(), pos) {
                return Err(StoreError::InvalidLayer {
                    layer: pos,
                    detail: format!("tensor {} already used by layer {prev}", layer.tensor_name),
                });
            }
            if tensor.shape != layer.expected_shape() {
                return Err(StoreError::ShapeMismatch {
                    tensor: tensor.name.clone(),
                    detail: format!(
                        "layer {pos} expects shape {:?}, tensor has {:?}",
                        layer.expected_shape(),
                        tensor.shape
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Quantization settings echoed into the `.ptqq` header for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSettings {
    pub alpha: f64,
    pub beta: f64,
    pub bits_important: u8,
    pub bits_other: u8,
    pub act_bits: u8,
    pub grid: usize,
    pub normalize_layer_score: bool,
}

/// One layer of a quantized model.
///
/// `codes` holds one sign-magnitude field per weight in channel-major then
/// row-major order, each as wide as its channel's bit-width. `mask` holds one
/// bit per weight in the same order, set for the sparse region.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub layer: LayerDescriptor,
    pub p: f64,
    pub l: f64,
    pub channel_bits: Vec<u8>,
    pub scales_dense: Vec<f64>,
    pub scales_sparse: Vec<f64>,
    pub codes: Vec<u8>,
    pub codes_nbits: u64,
    pub mask: Vec<u8>,
    pub mask_nbits: u64,
}

impl QuantizedLayer {
    pub fn weight_count(&self) -> usize {
        self.layer.weight_count()
    }

    pub fn expected_code_bits(&self) -> u64 {
        let per = self.layer.weights_per_channel() as u64;
        self.channel_bits.iter().map(|&b| per * u64::from(b)).sum()
    }

    pub fn validate(&self) -> StoreResult<()> {
        let idx = self.layer.layer_index;
        let bad = |detail: String| StoreError::InvalidLayer { layer: idx, detail };
        self.layer.check_dims()?;
        let m = self.layer.m;
        if self.channel_bits.len() != m || self.scales_dense.len() != m || self.scales_sparse.len() != m {
            return Err(bad(format!(
                "expected {m} channel entries, got bits={} dense={} sparse={}",
                self.channel_bits.len(),
                self.scales_dense.len(),
                self.scales_sparse.len()
            )));
        }
        if let Some(b) = self
            .channel_bits
            .iter()
            .find(|&&b| !(2..=MAX_FIELD_BITS as u8).contains(&b))
        {
            return Err(bad(format!("channel bit-width {b} outside 2..={MAX_FIELD_BITS}")));
        }
        let finite_nonneg = |v: &f64| v.is_finite() && *v >= 0.0;
        if !finite_nonneg(&self.p) || !finite_nonneg(&self.l) {
            return Err(bad(format!("invalid range p={} l={}", self.p, self.l)));
        }
        if self.l > 0.0 {
            if !(self.p > 0.0 && self.p <= self.l / 2.0) {
                return Err(bad(format!("breakpoint p={} must lie in (0, l/2] with l={}", self.p, self.l)));
            }
        } else if self.p != 0.0 {
            return Err(bad(format!("degenerate layer (l=0) must have p=0, got {}", self.p)));
        }
        if !self.scales_dense.iter().chain(&self.scales_sparse).all(finite_nonneg) {
            return Err(bad("scales must be finite and non-negative".into()));
        }
        let expected = self.expected_code_bits();
        if self.codes_nbits != expected {
            return Err(StoreError::BitstreamLength {
                layer: idx,
                stream: "code",
                declared: self.codes_nbits,
                expected,
            });
        }
        let expected = self.weight_count() as u64;
        if self.mask_nbits != expected {
            return Err(StoreError::BitstreamLength {
                layer: idx,
                stream: "mask",
                declared: self.mask_nbits,
                expected,
            });
        }
        for (stream, bytes, nbits) in [
            ("code", &self.codes, self.codes_nbits),
            ("mask", &self.mask, self.mask_nbits),
        ] {
            if bytes.len() as u64 != nbits.div_ceil(8) {
                return Err(StoreError::BitstreamLength {
                    layer: idx,
                    stream,
                    declared: bytes.len() as u64 * 8,
                    expected: nbits.div_ceil(8) * 8,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantizedModel {
    pub source_model_name: String,
    pub settings: Option<QuantSettings>,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    pub fn validate(&self) -> StoreResult<()> {
        for (pos, ql) in self.layers.iter().enumerate() {
            if ql.layer.layer_index != pos {
                return Err(StoreError::InvalidLayer {
                    layer: ql.layer.layer_index,
                    detail: format!("layer_index must be {pos}"),
                });
            }
            ql.validate()?;
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(QuantizedLayer::weight_count).sum()
    }

    pub fn layer_descriptors(&self) -> Vec<LayerDescriptor> {
        self.layers.iter().map(|q| q.layer.clone()).collect()
    }

    pub fn channel_bits(&self) -> Vec<Vec<u8>> {
        self.layers.iter().map(|q| q.channel_bits.clone()).collect()
    }
}

// ---- on-disk headers ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleHeader {
    model_name: String,
    layers: Vec<LayerDescriptor>,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantizedHeader {
    source_model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<QuantSettings>,
    layers: Vec<QuantizedLayerEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantizedLayerEntry {
    layer_index: usize,
    kind: LayerKind,
    m: usize,
    n: usize,
    k: usize,
    tensor_name: String,
    shape: Vec<usize>,
    p: f64,
    l: f64,
    channel_bits: Vec<u8>,
    scales_dense: Vec<f64>,
    scales_sparse: Vec<f64>,
    codes_offset: u64,
    codes_nbits: u64,
    mask_offset: u64,
    mask_nbits: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_envelope(magic: [u8; 4], header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ENVELOPE_PREFIX_LEN + header.len() + payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

fn read_envelope(bytes: &[u8], magic: [u8; 4]) -> StoreResult<(&[u8], &[u8])> {
    if bytes.len() < 4 || bytes[..4] != magic {
        return Err(StoreError::BadMagic {
            expected: String::from_utf8_lossy(&magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < ENVELOPE_PREFIX_LEN {
        return Err(StoreError::Truncated {
            what: "envelope".into(),
            needed: ENVELOPE_PREFIX_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: version });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[ENVELOPE_PREFIX_LEN..];
    if header_len > rest.len() as u64 {
        return Err(StoreError::Truncated {
            what: "header".into(),
            needed: header_len,
            available: rest.len() as u64,
        });
    }
    Ok(rest.split_at(header_len as usize))
}

fn payload_slice(payload: &[u8], offset: u64, len: u64, what: impl FnOnce() -> String) -> StoreResult<&[u8]> {
    let end = offset.checked_add(len).filter(|&e| e <= payload.len() as u64);
    match end {
        Some(end) => Ok(&payload[offset as usize..end as usize]),
        None => Err(StoreError::Truncated {
            what: what(),
            needed: offset.saturating_add(len),
            available: payload.len() as u64,
        }),
    }
}

fn header_err(e: serde_json::Error) -> StoreError {
    StoreError::Header(e.to_string())
}

/// Checks the first four bytes of `path` against the known magics.
pub fn sniff_magic(path: &Path) -> StoreResult<[u8; 4]> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 4 {
        return Err(StoreError::Truncated {
            what: "magic".into(),
            needed: 4,
            available: bytes.len() as u64,
        });
    }
    Ok(bytes[..4].try_into().unwrap())
}

pub fn encode_bundle(bundle: &ModelBundle) -> StoreResult<Vec<u8>> {
    bundle.validate()?;
    let mut payload = Vec::new();
    let mut entries = BTreeMap::new();
    for (name, tensor) in &bundle.tensors {
        let offset = payload.len() as u64;
        for v in &tensor.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.insert(
            name.clone(),
            TensorEntry {
                shape: tensor.shape.clone(),
                dtype: tensor.dtype,
                offset,
                nbytes: payload.len() as u64 - offset,
            },
        );
    }
    let header = BundleHeader {
        model_name: bundle.model_name.clone(),
        layers: bundle.layers.clone(),
        tensors: entries,
    };
    let header = serde_json::to_vec(&header).map_err(header_err)?;
    Ok(write_envelope(BUNDLE_MAGIC, &header, &payload))
}

pub fn decode_bundle(bytes: &[u8]) -> StoreResult<ModelBundle> {
    let (header, payload) = read_envelope(bytes, BUNDLE_MAGIC)?;
    let header: BundleHeader = serde_json::from_slice(header).map_err(header_err)?;
    let mut tensors = BTreeMap::new();
    for (name, entry) in header.tensors {
        let count: usize = entry.shape.iter().product();
        if entry.nbytes != count as u64 * 4 {
            return Err(StoreError::ShapeMismatch {
                tensor: name,
                detail: format!(
                    "shape {:?} needs {} bytes, header declares {}",
                    entry.shape,
                    count * 4,
                    entry.nbytes
                ),
            });
        }
        let raw = payload_slice(payload, entry.offset, entry.nbytes, || format!("tensor {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = TensorRecord::new(name.clone(), entry.shape, data)?;
        tensors.insert(name, tensor);
    }
    let bundle = ModelBundle {
        model_name: header.model_name,
        layers: header.layers,
        tensors,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> StoreResult<()> {
    let bytes = encode_bundle(bundle)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_bundle(path: &Path) -> StoreResult<ModelBundle> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_bundle(&bytes)
}

pub fn encode_quantized(qm: &QuantizedModel) -> StoreResult<Vec<u8>> {
    qm.validate()?;
    let mut payload = Vec::new();
    let mut layers = Vec::with_capacity(qm.layers.len());
    for ql in &qm.layers {
        let codes_offset = payload.len() as u64;
        payload.extend_from_slice(&ql.codes);
        let mask_offset = payload.len() as u64;
        payload.extend_from_slice(&ql.mask);
        let d = &ql.layer;
        layers.push(QuantizedLayerEntry {
            layer_index: d.layer_index,
            kind: d.kind,
            m: d.m,
            n: d.n,
            k: d.k,
            tensor_name: d.tensor_name.clone(),
            shape: d.expected_shape(),
            p: ql.p,
            l: ql.l,
            channel_bits: ql.channel_bits.clone(),
            scales_dense: ql.scales_dense.clone(),
            scales_sparse: ql.scales_sparse.clone(),
            codes_offset,
            codes_nbits: ql.codes_nbits,
            mask_offset,
            mask_nbits: ql.mask_nbits,
        });
    }
    let header = QuantizedHeader {
        source_model_name: qm.source_model_name.clone(),
        config: qm.settings,
        layers,
    };
    let header = serde_json::to_vec(&header).map_err(header_err)?;
    Ok(write_envelope(QUANTIZED_MAGIC, &header, &payload))
}

pub fn decode_quantized(bytes: &[u8]) -> StoreResult<QuantizedModel> {
    let (header, payload) = read_envelope(bytes, QUANTIZED_MAGIC)?;
    let header: QuantizedHeader = serde_json::from_slice(header).map_err(header_err)?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for e in header.layers {
        let layer = LayerDescriptor {
            layer_index: e.layer_index,
            kind: e.kind,
            m: e.m,
            n: e.n,
            k: e.k,
            tensor_name: e.tensor_name,
        };
        if e.shape != layer.expected_shape() {
            return Err(StoreError::ShapeMismatch {
                tensor: layer.tensor_name,
                detail: format!("header shape {:?} disagrees with m/n/k", e.shape),
            });
        }
        let idx = e.layer_index;
        let codes = payload_slice(payload, e.codes_offset, e.codes_nbits.div_ceil(8), || {
            format!("layer {idx} code stream")
        })?;
        let mask = payload_slice(payload, e.mask_offset, e.mask_nbits.div_ceil(8), || {
            format!("layer {idx} region mask")
        })?;
        layers.push(QuantizedLayer {
            layer,
            p: e.p,
            l: e.l,
            channel_bits: e.channel_bits,
            scales_dense: e.scales_dense,
            scales_sparse: e.scales_sparse,
            codes: codes.to_vec(),
            codes_nbits: e.codes_nbits,
            mask: mask.to_vec(),
            mask_nbits: e.mask_nbits,
        });
    }
    let qm = QuantizedModel {
        source_model_name: header.source_model_name,
        settings: header.config,
        layers,
    };
    qm.validate()?;
    Ok(qm)
}

pub fn save_quantized(qm: &QuantizedModel, path: &Path) -> StoreResult<()> {
    let bytes = encode_quantized(qm)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_quantized(path: &Path) -> StoreResult<QuantizedModel> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_quantized(&bytes)
}
