use super::uniform::{quantize_uniform, UniformQuantParams};
use super::{find_breakpoint, EmpiricalCdf, QuantError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Dense,
    Sparse,
}

/// Layer range bound `l` and breakpoint `p`. Scales depend on the bit-width
/// of the channel being coded, so they are derived on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseParams {
    pub l: f64,
    pub p: f64,
}

impl PiecewiseParams {
    pub fn new(l: f64, p: f64) -> Result<Self, QuantError> {
        let ok = if l == 0.0 {
            p == 0.0
        } else {
            l.is_finite() && l > 0.0 && p > 0.0 && p <= l / 2.0
        };
        if !ok {
            return Err(QuantError::InvalidBreakpoint { p, l });
        }
        Ok(Self { l, p })
    }

    /// All-zero layer: everything codes to dense zero.
    pub fn degenerate() -> Self {
        Self { l: 0.0, p: 0.0 }
    }

    pub fn is_degenerate(&self) -> bool {
        self.l == 0.0
    }

    pub fn max_magnitude(bits: u32) -> u32 {
        ((1u64 << (bits - 1)) - 1) as u32
    }

    pub fn scale_dense(&self, bits: u32) -> f64 {
        self.p / f64::from(Self::max_magnitude(bits))
    }

    pub fn scale_sparse(&self, bits: u32) -> f64 {
        (self.l - self.p) / f64::from(Self::max_magnitude(bits))
    }

    pub fn scale(&self, region: Region, bits: u32) -> f64 {
        match region {
            Region::Dense => self.scale_dense(bits),
            Region::Sparse => self.scale_sparse(bits),
        }
    }

    fn region_quantizer(&self, region: Region, bits: u32) -> UniformQuantParams {
        let (min, max, offset) = match region {
            Region::Dense => (0.0, self.p, 0.0),
            Region::Sparse => (self.p, self.l, self.p),
        };
        UniformQuantParams {
            min,
            max,
            bits: bits - 1,
            offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PiecewiseCode {
    pub negative: bool,
    pub magnitude: u32,
    pub region: Region,
}

/// Codes `x` with `bits` bits: one sign bit plus a `bits - 1` bit uniform
/// code over the magnitude range of the region `|x|` falls in. The dense
/// region is closed, so `|x| = p` is dense.
pub fn quantize_piecewise(x: f64, params: &PiecewiseParams, bits: u32) -> PiecewiseCode {
    debug_assert!(bits >= 2);
    let negative = x < 0.0;
    if params.is_degenerate() {
        return PiecewiseCode {
            negative: false,
            magnitude: 0,
            region: Region::Dense,
        };
    }
    let a = x.abs();
    let region = if a <= params.p { Region::Dense } else { Region::Sparse };
    let magnitude = match quantize_uniform(a, &params.region_quantizer(region, bits)) {
        Ok(code) => code.clamp(0, i64::from(PiecewiseParams::max_magnitude(bits))) as u32,
        // A zero-width region stores code 0 and decodes to its offset.
        Err(_) => 0,
    };
    PiecewiseCode {
        negative,
        magnitude,
        region,
    }
}

pub fn dequantize_piecewise(code: PiecewiseCode, params: &PiecewiseParams, bits: u32) -> f64 {
    let mag = match code.region {
        Region::Dense => params.scale_dense(bits) * f64::from(code.magnitude),
        Region::Sparse => params.p + params.scale_sparse(bits) * f64::from(code.magnitude),
    };
    if code.negative {
        -mag
    } else {
        mag
    }
}

/// Quantizes and decodes `values` as one layer at a single bit-width,
/// searching the breakpoint on a `grid`-point grid. Returns the decoded
/// values and the parameters used.
pub fn round_trip_piecewise(
    values: &[f32],
    bits: u32,
    grid: usize,
) -> Result<(Vec<f32>, PiecewiseParams), QuantError> {
    let cdf = EmpiricalCdf::from_weights(values)?;
    let params = match find_breakpoint(&cdf, bits, grid) {
        Ok(bp) => PiecewiseParams::new(bp.l, bp.p)?,
        Err(QuantError::DegenerateRange) => PiecewiseParams::degenerate(),
        Err(e) => return Err(e),
    };
    let decoded = values
        .iter()
        .map(|&v| dequantize_piecewise(quantize_piecewise(f64::from(v), &params, bits), &params, bits) as f32)
        .collect();
    Ok((decoded, params))
}
