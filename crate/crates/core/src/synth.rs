//! Synthetic weight bundles with bell-shaped distributions, and the
//! architecture descriptors they are shaped after.
//!
//! Descriptor files are JSON:
//!
//! ```json
//! { "name": "tiny", "layers": [["conv", 16, 3, 3], ["fc", 10, 16, 1]] }
//! ```
//!
//! Each tuple is `(kind, m, n, k)`: output channels, input channels per
//! output channel (1 for depthwise), kernel side (1 for fc).
//!
//! Sampling is counter-based: every weight is a pure function of
//! `(seed, layer, index)`, so parallel and sequential generation agree.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{LayerDescriptor, LayerKind, ModelBundle};

const RESNET50_LIKE: &str = include_str!("../arch/resnet50-like.json");
const MOBILENETV2_LIKE: &str = include_str!("../arch/mobilenetv2-like.json");

pub const BUILTIN_ARCHS: [&str; 2] = ["resnet50-like", "mobilenetv2-like"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec(pub LayerKind, pub usize, pub usize, pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl ArchDescriptor {
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "resnet50-like" => RESNET50_LIKE,
            "mobilenetv2-like" => MOBILENETV2_LIKE,
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled descriptor is valid"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let arch: Self = serde_json::from_str(text).map_err(|e| Error::Descriptor(e.to_string()))?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// A built-in name, or else a path to a descriptor file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(a) => Ok(a),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    fn validate(&self) -> Result<()> {
        for (i, LayerSpec(kind, m, n, k)) in self.layers.iter().enumerate() {
            if *m == 0 || *n == 0 || *k == 0 {
                return Err(Error::Descriptor(format!("layer {i}: dimensions must be positive")));
            }
            if *kind == LayerKind::Fc && *k != 1 {
                return Err(Error::Descriptor(format!("layer {i}: fc layers need k = 1")));
            }
        }
        Ok(())
    }

    pub fn total_params(&self) -> u64 {
        self.layers
            .iter()
            .map(|LayerSpec(_, m, n, k)| (m * n * k * k) as u64)
            .sum()
    }

    pub fn layer_descriptors(&self) -> Vec<LayerDescriptor> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, &LayerSpec(kind, m, n, k))| LayerDescriptor {
                layer_index: i,
                kind,
                m,
                n,
                k,
                tensor_name: tensor_name(i),
            })
            .collect()
    }
}

pub fn tensor_name(layer: usize) -> String {
    format!("layer{layer:04}.weight")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightDist {
    Gaussian { sigma: f64 },
    Laplace { scale: f64 },
    Uniform { bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenOptions {
    pub dist: WeightDist,
    pub seed: u64,
    /// Per-layer spread multiplies the distribution width by a factor drawn
    /// from `[1 - spread, 1 + spread]`; 0 keeps every layer identical.
    pub layer_spread: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit hash of `(seed, stream, counter)`.
pub fn counter_hash(seed: u64, stream: u64, counter: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream) ^ counter)
}

/// Uniform in the open interval (0, 1).
fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn sample(dist: WeightDist, seed: u64, stream: u64, index: u64, width: f64) -> f32 {
    let u1 = unit_open(counter_hash(seed, stream, 2 * index));
    let v = match dist {
        WeightDist::Gaussian { sigma } => {
            let u2 = unit_open(counter_hash(seed, stream, 2 * index + 1));
            sigma * width * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
        WeightDist::Laplace { scale } => {
            let c = u1 - 0.5;
            -scale * width * c.signum() * (1.0 - 2.0 * c.abs()).ln()
        }
        WeightDist::Uniform { bound } => bound * width * (2.0 * u1 - 1.0),
    };
    v as f32
}

/// `count` i.i.d. draws for `(seed, stream)`, independent of thread count.
pub fn sample_weights(dist: WeightDist, seed: u64, stream: u64, count: usize) -> Vec<f32> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample(dist, seed, stream, i, 1.0))
        .collect()
}

/// Width multiplier for `layer` under `opts`.
pub fn layer_factor(opts: &GenOptions, layer: usize) -> f64 {
    let u = unit_open(counter_hash(opts.seed, layer as u64, u64::MAX));
    1.0 + opts.layer_spread * (2.0 * u - 1.0)
}

pub fn gen_model(arch: &ArchDescriptor, opts: &GenOptions) -> ModelBundle {
    let mut bundle = ModelBundle::new(arch.name.clone());
    for layer in arch.layer_descriptors() {
        let width = layer_factor(opts, layer.layer_index);
        let stream = layer.layer_index as u64;
        let data: Vec<f32> = (0..layer.weight_count() as u64)
            .into_par_iter()
            .map(|i| sample(opts.dist, opts.seed, stream, i, width))
            .collect();
        bundle
            .push_layer(layer.kind, layer.m, layer.n, layer.k, data)
            .expect("descriptor dimensions were validated");
    }
    bundle
}
