use super::QuantError;

/// `min(max(x, lo), hi)`.
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Rounds half away from zero (the only rounding mode used in this crate).
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Affine uniform quantizer over `[min, max]` with `2^bits` levels and
/// code offset `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantParams {
    pub min: f64,
    pub max: f64,
    pub bits: u32,
    pub offset: f64,
}

impl UniformQuantParams {
    pub fn new(min: f64, max: f64, bits: u32, offset: f64) -> Result<Self, QuantError> {
        if !(1..=32).contains(&bits) {
            return Err(QuantError::InvalidBits(bits));
        }
        if min > max || !min.is_finite() || !max.is_finite() {
            return Err(QuantError::InvalidRange { min, max });
        }
        Ok(Self {
            min,
            max,
            bits,
            offset,
        })
    }

    pub fn delta(&self) -> f64 {
        self.max - self.min
    }

    pub fn levels(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }

    pub fn scale(&self) -> f64 {
        self.delta() / self.levels()
    }
}

pub fn quantize_uniform(x: f64, params: &UniformQuantParams) -> Result<i64, QuantError> {
    let s = params.scale();
    if s == 0.0 {
        return Err(QuantError::ZeroRange);
    }
    let c = clamp(x, params.min, params.max);
    Ok(round_half_away((c - params.offset) / s) as i64)
}

pub fn dequantize_uniform(code: i64, params: &UniformQuantParams) -> f64 {
    code as f64 * params.scale() + params.offset
}

/// Single-region symmetric baseline: `bits` bits over `[-l, l]` with
/// `l = max|w|`, offset `-l`. Returns the decoded values.
pub fn round_trip_uniform(values: &[f32], bits: u32) -> Result<Vec<f32>, QuantError> {
    let l = values.iter().fold(0.0f64, |a, &v| a.max(f64::from(v.abs())));
    if l == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    let params = UniformQuantParams::new(-l, l, bits, -l)?;
    values
        .iter()
        .map(|&v| quantize_uniform(f64::from(v), &params).map(|c| dequantize_uniform(c, &params) as f32))
        .collect()
}
