//! Model size, bit-operation counts and quantization error reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pwq::dequantize_layer;
use crate::store::{LayerDescriptor, ModelBundle, QuantSettings, QuantizedModel};

pub const BASELINE_BITS: u32 = 32;
pub const BITS_PER_MBIT: f64 = 1e6;
/// Bits charged per stored scalar (p, l and the two scales per channel)
/// when accounting for metadata overhead.
pub const SCALAR_OVERHEAD_BITS: u64 = 32;

pub fn to_mbit(bits: u64) -> f64 {
    bits as f64 / BITS_PER_MBIT
}

/// `Σ_channels weights_per_channel × bit-width`.
pub fn model_size_bits(layers: &[LayerDescriptor], channel_bits: &[Vec<u8>]) -> u64 {
    layers
        .iter()
        .zip(channel_bits)
        .map(|(layer, bits)| {
            let per = layer.weights_per_channel() as u64;
            bits.iter().map(|&b| per * u64::from(b)).sum::<u64>()
        })
        .sum()
}

pub fn uniform_size_bits(layers: &[LayerDescriptor], bits: u32) -> u64 {
    layers
        .iter()
        .map(|l| l.weight_count() as u64 * u64::from(bits))
        .sum()
}

pub fn baseline_size_bits(layers: &[LayerDescriptor]) -> u64 {
    uniform_size_bits(layers, BASELINE_BITS)
}

pub fn size_reduction_pct(quantized_bits: u64, baseline_bits: u64) -> f64 {
    if baseline_bits == 0 {
        return 0.0;
    }
    100.0 * (1.0 - quantized_bits as f64 / baseline_bits as f64)
}

/// Bit operations of a conv/fc layer:
/// `m n k² (b_a b_w + b_a + b_w log2(n k²))`.
pub fn bops_layer(m: usize, n: usize, k: usize, act_bits: u32, weight_bits: u32) -> f64 {
    let (m, n, k) = (m as f64, n as f64, k as f64);
    let (ba, bw) = (f64::from(act_bits), f64::from(weight_bits));
    let fan_in = n * k * k;
    m * fan_in * (ba * bw + ba + bw * fan_in.log2())
}

/// BOPs of one mixed-precision layer: output channels are grouped by
/// bit-width and each group is costed as a layer of that many channels.
pub fn bops_mixed_layer(layer: &LayerDescriptor, channel_bits: &[u8], act_bits: u32) -> f64 {
    let mut groups: BTreeMap<u8, usize> = BTreeMap::new();
    for &b in channel_bits {
        *groups.entry(b).or_default() += 1;
    }
    groups
        .into_iter()
        .map(|(b, count)| bops_layer(count, layer.n, layer.k, act_bits, u32::from(b)))
        .sum()
}

/// Returns `(total, per_layer)`.
pub fn bops_model(layers: &[LayerDescriptor], channel_bits: &[Vec<u8>], act_bits: u32) -> (f64, Vec<f64>) {
    let per_layer: Vec<f64> = layers
        .iter()
        .zip(channel_bits)
        .map(|(l, bits)| bops_mixed_layer(l, bits, act_bits))
        .collect();
    (per_layer.iter().sum(), per_layer)
}

pub fn uniform_channel_bits(layers: &[LayerDescriptor], bits: u8) -> Vec<Vec<u8>> {
    layers.iter().map(|l| vec![bits; l.m]).collect()
}

pub fn bits_histogram(channel_bits: &[u8], weights_per_channel: usize) -> BTreeMap<u8, u64> {
    let mut hist = BTreeMap::new();
    for &b in channel_bits {
        *hist.entry(b).or_default() += weights_per_channel as u64;
    }
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    pub per_layer: Vec<f64>,
    /// Mean over all weights of the model.
    pub total: f64,
}

pub fn mse_between(original: &[f32], decoded: &[f32]) -> f64 {
    if original.is_empty() {
        return 0.0;
    }
    let sum: f64 = original
        .iter()
        .zip(decoded)
        .map(|(&a, &b)| {
            let d = f64::from(b) - f64::from(a);
            d * d
        })
        .sum();
    sum / original.len() as f64
}

pub fn mse_report(original: &ModelBundle, quantized: &QuantizedModel) -> Result<MseSummary> {
    if original.layers.len() != quantized.layers.len() {
        return Err(Error::Mismatch(format!(
            "original has {} layers, quantized has {}",
            original.layers.len(),
            quantized.layers.len()
        )));
    }
    let mut per_layer = Vec::with_capacity(original.layers.len());
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for (layer, ql) in original.layers.iter().zip(&quantized.layers) {
        let tensor = original
            .tensor_for(layer)
            .filter(|t| t.shape == ql.layer.expected_shape())
            .ok_or_else(|| Error::Mismatch(format!("layer {} shape differs", layer.layer_index)))?;
        let decoded = dequantize_layer(ql)?;
        let mse = mse_between(&tensor.data, &decoded);
        sq_sum += mse * tensor.data.len() as f64;
        count += tensor.data.len();
        per_layer.push(mse);
    }
    let total = if count == 0 { 0.0 } else { sq_sum / count as f64 };
    Ok(MseSummary { per_layer, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_index: usize,
    pub tensor_name: String,
    pub params: u64,
    pub bits_histogram: BTreeMap<u8, u64>,
    pub p: f64,
    pub l: f64,
    pub mse: f64,
    pub bops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub model_name: String,
    pub params: u64,
    pub baseline_bits: u64,
    pub quantized_bits: u64,
    pub overhead_bits: u64,
    pub size_reduction_pct: f64,
    pub baseline_mbit: f64,
    pub quantized_mbit: f64,
    pub per_layer_mse: Vec<f64>,
    pub total_mse: f64,
    pub per_layer_bops: Vec<f64>,
    pub total_bops: f64,
    pub act_bits: u8,
    pub config: Option<QuantSettings>,
    pub layers: Vec<LayerReport>,
}

/// Region mask (one bit per weight) plus stored scalars: `p`, `l` and two
/// scales per channel.
pub fn overhead_bits(qm: &QuantizedModel) -> u64 {
    qm.layers
        .iter()
        .map(|ql| ql.mask_nbits + SCALAR_OVERHEAD_BITS * (2 + 2 * ql.channel_bits.len() as u64))
        .sum()
}

pub fn build_report(original: &ModelBundle, qm: &QuantizedModel, act_bits: u8) -> Result<QuantReport> {
    let layers = qm.layer_descriptors();
    let channel_bits = qm.channel_bits();
    let mse = mse_report(original, qm)?;
    let (total_bops, per_layer_bops) = bops_model(&layers, &channel_bits, u32::from(act_bits));
    let baseline_bits = baseline_size_bits(&layers);
    let quantized_bits = model_size_bits(&layers, &channel_bits);
    let layer_reports = qm
        .layers
        .iter()
        .enumerate()
        .map(|(i, ql)| LayerReport {
            layer_index: ql.layer.layer_index,
            tensor_name: ql.layer.tensor_name.clone(),
            params: ql.weight_count() as u64,
            bits_histogram: bits_histogram(&ql.channel_bits, ql.layer.weights_per_channel()),
            p: ql.p,
            l: ql.l,
            mse: mse.per_layer[i],
            bops: per_layer_bops[i],
        })
        .collect();
    Ok(QuantReport {
        model_name: qm.source_model_name.clone(),
        params: qm.weight_count() as u64,
        baseline_bits,
        quantized_bits,
        overhead_bits: overhead_bits(qm),
        size_reduction_pct: size_reduction_pct(quantized_bits, baseline_bits),
        baseline_mbit: to_mbit(baseline_bits),
        quantized_mbit: to_mbit(quantized_bits),
        per_layer_mse: mse.per_layer,
        total_mse: mse.total,
        per_layer_bops,
        total_bops,
        act_bits,
        config: qm.settings,
        layers: layer_reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

fn histogram_cell(hist: &BTreeMap<u8, u64>) -> String {
    hist.iter()
        .map(|(b, n)| format!("{b}:{n}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub const REPORT_CSV_HEADER: &str = "layer_index,params,bits_histogram,p,l,mse,bops";

pub fn render_report(report: &QuantReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Mismatch(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut s = String::new();
            writeln!(s, "{REPORT_CSV_HEADER}").unwrap();
            for l in &report.layers {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    l.layer_index,
                    l.params,
                    histogram_cell(&l.bits_histogram),
                    l.p,
                    l.l,
                    l.mse,
                    l.bops
                )
                .unwrap();
            }
            Ok(s)
        }
    }
}

pub fn emit_report(report: &QuantReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = render_report(report, format)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
