//! Post-training mixed-precision weight quantization.
//!
//! The pipeline has two phases. [`importance`] ranks layers by the L1 norm
//! of their weights and channels by their L2 norm, then assigns each
//! output channel a high or low bit-width. [`pwq`] splits every layer's
//! range into a dense region around zero and a sparse tail region at an
//! error-minimizing breakpoint, and codes each weight as a sign bit plus a
//! uniform magnitude code within its region.
//!
//! [`store`] holds the `.ptqb`/`.ptqq` containers, [`metrics`] the size,
//! BOPs and error accounting, and [`synth`] bell-shaped synthetic models.

pub mod bitpack;
pub mod cli;
pub mod error;
pub mod importance;
pub mod metrics;
pub mod pwq;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use importance::{partition, ImportanceConfig, ImportancePartition, ImportanceScores};
pub use pwq::{dequantize_model, quantize_model, PiecewiseParams};
pub use store::{
    load_bundle, load_quantized, save_bundle, save_quantized, LayerDescriptor, LayerKind,
    ModelBundle, QuantSettings, QuantizedLayer, QuantizedModel, TensorRecord,
};
