//! Layer and channel importance scoring and bit-width assignment.
//!
//! Layers are ranked by the L1 norm of their weights, channels (slices along
//! the output-channel axis) by their L2 norm. The top `alpha` percent of
//! layers are important. Inside an important layer the top `beta` fraction
//! of channels get the high bit-width; inside any other layer the top
//! `1 - beta` fraction do.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::bitpack::MAX_FIELD_BITS;
use crate::store::{LayerDescriptor, ModelBundle, TensorRecord};

#[derive(Debug, Error, PartialEq)]
pub enum ImportanceError {
    #[error("bundle has no layers")]
    EmptyBundle,
    #[error("invalid importance config: {0}")]
    InvalidConfig(String),
    #[error("layer {0}: tensor missing or inconsistent with descriptor")]
    BadLayer(usize),
}

pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceConfig {
    /// Percentage of layers (0..=100) marked important.
    pub alpha: f64,
    /// Fraction of channels (0..=1) marked important inside important layers.
    pub beta: f64,
    pub bits_important: u8,
    pub bits_other: u8,
    /// Divide the layer L1 score by the layer's weight count.
    pub normalize_layer_score: bool,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: DEFAULT_BETA,
            bits_important: 8,
            bits_other: 2,
            normalize_layer_score: false,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<(), ImportanceError> {
        let bad = |m: String| Err(ImportanceError::InvalidConfig(m));
        if !(0.0..=100.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 100]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1]", self.beta));
        }
        if self.bits_other < 2 {
            return bad(format!("low bit-width {} must be >= 2", self.bits_other));
        }
        if self.bits_important < self.bits_other {
            return bad(format!(
                "high bit-width {} must be >= low bit-width {}",
                self.bits_important, self.bits_other
            ));
        }
        if u32::from(self.bits_important) > MAX_FIELD_BITS {
            return bad(format!("bit-width {} exceeds {MAX_FIELD_BITS}", self.bits_important));
        }
        Ok(())
    }
}

/// Sum of absolute weights, optionally divided by the weight count.
pub fn layer_score(tensor: &TensorRecord, normalize: bool) -> f64 {
    let sum: f64 = tensor.data.iter().map(|w| f64::from(w.abs())).sum();
    if normalize && !tensor.data.is_empty() {
        sum / tensor.data.len() as f64
    } else {
        sum
    }
}

/// Euclidean norm of each output-channel slice.
pub fn channel_scores(tensor: &TensorRecord, layer: &LayerDescriptor) -> Vec<f64> {
    let per = layer.weights_per_channel();
    tensor
        .data
        .chunks(per)
        .take(layer.m)
        .map(|ch| ch.iter().map(|&w| f64::from(w) * f64::from(w)).sum::<f64>().sqrt())
        .collect()
}

/// `round(fraction * count)` half away from zero, clamped to `[0, count]`.
pub fn selection_count(fraction: f64, count: usize) -> usize {
    let k = (fraction * count as f64).round();
    (k.max(0.0) as usize).min(count)
}

/// `round(alpha / 100 * layers)`. The product `alpha * layers` is exact for
/// integral alpha, so exact halves round away from zero as intended.
pub fn important_layer_count(alpha: f64, layers: usize) -> usize {
    let k = (alpha * layers as f64 / 100.0).round();
    (k.max(0.0) as usize).min(layers)
}

/// Indices of the `k` largest scores; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().take(k).collect()
}

/// Per-layer and per-channel scores, computed once and reusable across
/// different `alpha`/`beta` settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub layer_scores: Vec<f64>,
    pub channel_scores: Vec<Vec<f64>>,
}

impl ImportanceScores {
    pub fn compute(bundle: &ModelBundle, normalize: bool) -> Result<Self, ImportanceError> {
        if bundle.layers.is_empty() {
            return Err(ImportanceError::EmptyBundle);
        }
        let scored: Vec<(f64, Vec<f64>)> = bundle
            .layers
            .par_iter()
            .map(|layer| {
                let tensor = bundle
                    .tensor_for(layer)
                    .filter(|t| t.data.len() == layer.weight_count())
                    .ok_or(ImportanceError::BadLayer(layer.layer_index))?;
                Ok((layer_score(tensor, normalize), channel_scores(tensor, layer)))
            })
            .collect::<Result<_, ImportanceError>>()?;
        let (layer_scores, channel_scores) = scored.into_iter().unzip();
        Ok(Self {
            layer_scores,
            channel_scores,
        })
    }

    pub fn partition(&self, cfg: &ImportanceConfig) -> Result<ImportancePartition, ImportanceError> {
        cfg.validate()?;
        let layer_count = self.layer_scores.len();
        if layer_count == 0 {
            return Err(ImportanceError::EmptyBundle);
        }
        let important_layers = top_k(
            &self.layer_scores,
            important_layer_count(cfg.alpha, layer_count),
        );

        let mut important_channels = Vec::with_capacity(layer_count);
        let mut channel_bits = Vec::with_capacity(layer_count);
        for (idx, scores) in self.channel_scores.iter().enumerate() {
            let fraction = if important_layers.contains(&idx) {
                cfg.beta
            } else {
                1.0 - cfg.beta
            };
            let chosen = top_k(scores, selection_count(fraction, scores.len()));
            channel_bits.push(
                (0..scores.len())
                    .map(|c| {
                        if chosen.contains(&c) {
                            cfg.bits_important
                        } else {
                            cfg.bits_other
                        }
                    })
                    .collect(),
            );
            important_channels.push(chosen);
        }
        Ok(ImportancePartition {
            config: *cfg,
            layer_scores: self.layer_scores.clone(),
            channel_scores: self.channel_scores.clone(),
            important_layers,
            important_channels,
            channel_bits,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportancePartition {
    pub config: ImportanceConfig,
    pub layer_scores: Vec<f64>,
    pub channel_scores: Vec<Vec<f64>>,
    pub important_layers: BTreeSet<usize>,
    pub important_channels: Vec<BTreeSet<usize>>,
    pub channel_bits: Vec<Vec<u8>>,
}

impl ImportancePartition {
    pub fn is_important_layer(&self, layer: usize) -> bool {
        self.important_layers.contains(&layer)
    }
}

pub fn partition(bundle: &ModelBundle, cfg: &ImportanceConfig) -> Result<ImportancePartition, ImportanceError> {
    cfg.validate()?;
    ImportanceScores::compute(bundle, cfg.normalize_layer_score)?.partition(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::LayerKind;

    fn tensor(data: Vec<f32>) -> TensorRecord {
        TensorRecord::new("t", vec![data.len()], data).unwrap()
    }

    #[test]
    fn layer_score_is_l1() {
        let s = layer_score(&tensor(vec![0.1, -0.2, 0.3]), false);
        assert!((s - 0.6).abs() < 1e-7);
        assert_eq!(layer_score(&tensor(vec![0.0; 5]), false), 0.0);
        assert_eq!(
            layer_score(&tensor(vec![0.7]), false),
            layer_score(&tensor(vec![-0.7]), false)
        );
        let n = layer_score(&tensor(vec![1.0, -3.0]), true);
        assert_eq!(n, 2.0);
    }

    #[test]
    fn channel_score_is_l2() {
        let mut b = ModelBundle::new("c");
        b.push_layer(LayerKind::Fc, 3, 2, 1, vec![3.0, 4.0, 0.0, 0.0, -6.0, 8.0]).unwrap();
        let layer = &b.layers[0];
        let s = channel_scores(b.tensor_for(layer).unwrap(), layer);
        assert_eq!(s, vec![5.0, 0.0, 10.0]);
    }

    #[test]
    fn rounding_half_away() {
        assert_eq!(selection_count(0.5, 1), 1);
        assert_eq!(selection_count(0.25, 10), 3);
        assert_eq!(selection_count(0.15, 10), 2);
        assert_eq!(selection_count(1.0, 7), 7);
        assert_eq!(selection_count(0.0, 7), 0);
        assert_eq!(important_layer_count(30.0, 10), 3);
        assert_eq!(important_layer_count(15.0, 10), 2);
        assert_eq!(important_layer_count(5.0, 10), 1);
        assert_eq!(important_layer_count(100.0, 54), 54);
    }

    #[test]
    fn config_validation() {
        let ok = ImportanceConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ImportanceConfig { alpha: 101.0, ..ok },
            ImportanceConfig { alpha: -1.0, ..ok },
            ImportanceConfig { beta: 1.5, ..ok },
            ImportanceConfig { bits_other: 1, ..ok },
            ImportanceConfig { bits_important: 2, bits_other: 4, ..ok },
            ImportanceConfig { bits_important: 33, ..ok },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn empty_bundle_rejected() {
        let b = ModelBundle::new("e");
        assert_eq!(
            partition(&b, &ImportanceConfig::default()),
            Err(ImportanceError::EmptyBundle)
        );
    }

    #[test]
    fn alpha_zero_marks_nothing() {
        let mut b = ModelBundle::new("z");
        for i in 0..4 {
            b.push_layer(LayerKind::Fc, 5, 1, 1, (0..5).map(|c| (c + i) as f32).collect())
                .unwrap();
        }
        let cfg = ImportanceConfig { alpha: 0.0, beta: 0.8, ..Default::default() };
        let p = partition(&b, &cfg).unwrap();
        assert!(p.important_layers.is_empty());
        for chans in &p.important_channels {
            assert_eq!(chans.len(), 1); // round(0.2 * 5)
        }
    }

    #[test]
    fn single_layer_alpha() {
        let mut b = ModelBundle::new("one");
        b.push_layer(LayerKind::Fc, 2, 1, 1, vec![1.0, 2.0]).unwrap();
        let p = |alpha| partition(&b, &ImportanceConfig { alpha, ..Default::default() }).unwrap();
        assert!(p(49.0).important_layers.is_empty());
        assert_eq!(p(50.0).important_layers.len(), 1);
    }

    #[test]
    fn ties_break_to_lower_index() {
        assert_eq!(top_k(&[1.0, 2.0, 2.0, 2.0], 2), BTreeSet::from([1, 2]));
        assert_eq!(top_k(&[0.0; 4], 1), BTreeSet::from([0]));
    }
}
