//! Piecewise non-overlapping quantization.
//!
//! Each layer's range `[-l, l]` is split at a breakpoint `p` into a dense
//! region `[-p, p]` and a sparse region `[-l, -p) ∪ (p, l]`. A weight with a
//! `b`-bit budget keeps one sign bit and spends `b - 1` bits on a uniform
//! grid over its region's magnitude range. The breakpoint minimizes the
//! expected squared rounding error under the layer's empirical distribution.

mod breakpoint;
mod model;
mod piecewise;
mod uniform;

use thiserror::Error;

pub use breakpoint::{
    c_of_b, expected_error_piecewise, expected_error_uniform, find_breakpoint, Breakpoint,
    EmpiricalCdf, DEFAULT_GRID_SIZE,
};
pub use model::{dequantize_layer, dequantize_model, quantize_layer, quantize_model};
pub use piecewise::{
    dequantize_piecewise, quantize_piecewise, round_trip_piecewise, PiecewiseCode, PiecewiseParams,
    Region,
};
pub use uniform::{
    clamp, dequantize_uniform, quantize_uniform, round_half_away, round_trip_uniform,
    UniformQuantParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("bit-width {0} out of range")]
    InvalidBits(u32),
    #[error("zero quantization range (scale is 0)")]
    ZeroRange,
    #[error("invalid range: min {min} > max {max}")]
    InvalidRange { min: f64, max: f64 },
    #[error("empirical distribution has no samples")]
    EmptyCdf,
    #[error("all weights are zero; range is degenerate")]
    DegenerateRange,
    #[error("grid size {0} must be at least 2")]
    InvalidGrid(usize),
    #[error("breakpoint p={p} outside (0, l/2] for l={l}")]
    InvalidBreakpoint { p: f64, l: f64 },
    #[error("layer {0}: partition does not match the bundle")]
    PartitionMismatch(usize),
    #[error("layer {layer}: malformed stream: {detail}")]
    CorruptStream { layer: usize, detail: String },
}
