use super::QuantError;

pub const DEFAULT_GRID_SIZE: usize = 200;

/// Error-model constant `1 / (12 (2^b - 1)^2)` of a `b`-bit uniform quantizer.
pub fn c_of_b(bits: u32) -> Result<f64, QuantError> {
    if !(1..=32).contains(&bits) {
        return Err(QuantError::InvalidBits(bits));
    }
    let levels = ((1u64 << bits) - 1) as f64;
    Ok(1.0 / (12.0 * levels * levels))
}

/// Expected squared rounding error `s^2 / 12 = C(b) Δ^2` over `[min, max]`.
pub fn expected_error_uniform(bits: u32, min: f64, max: f64) -> Result<f64, QuantError> {
    if min > max {
        return Err(QuantError::InvalidRange { min, max });
    }
    let delta = max - min;
    Ok(c_of_b(bits)? * delta * delta)
}

/// Empirical distribution of a layer's weight magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted_abs: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn from_weights(weights: &[f32]) -> Result<Self, QuantError> {
        Self::from_abs_values(weights.iter().map(|w| f64::from(w.abs())).collect())
    }

    pub fn from_abs_values(mut values: Vec<f64>) -> Result<Self, QuantError> {
        if values.is_empty() {
            return Err(QuantError::EmptyCdf);
        }
        for v in &mut values {
            *v = v.abs();
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted_abs: values })
    }

    pub fn len(&self) -> usize {
        self.sorted_abs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_abs.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.sorted_abs.last().copied().unwrap_or(0.0)
    }

    /// Fraction of weights with `|w| <= p`. For a distribution symmetric
    /// about zero this equals `2F(p) - 1`.
    pub fn dense_fraction(&self, p: f64) -> f64 {
        let count = self.sorted_abs.partition_point(|&v| v <= p);
        count as f64 / self.sorted_abs.len() as f64
    }
}

/// Expected squared error of the two-region quantizer with `bits` per weight
/// (one spent on the sign): `C(b-1) [(l-p)^2 + l(2p-l)(2F(p)-1)]`.
pub fn expected_error_piecewise(bits: u32, l: f64, p: f64, cdf: &EmpiricalCdf) -> Result<f64, QuantError> {
    if bits < 2 {
        return Err(QuantError::InvalidBits(bits));
    }
    if cdf.is_empty() {
        return Err(QuantError::EmptyCdf);
    }
    if !(p > 0.0 && p < l) {
        return Err(QuantError::InvalidBreakpoint { p, l });
    }
    let c = c_of_b(bits - 1)?;
    let sparse = l - p;
    Ok(c * (sparse * sparse + l * (2.0 * p - l) * cdf.dense_fraction(p)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub p: f64,
    pub l: f64,
    pub error: f64,
}

/// Grid search for the error-minimizing breakpoint over
/// `p = l i / grid` for `i = 1 ..= grid / 2`, with `l = max|w|`.
/// Ties go to the smaller `p`. An all-zero layer yields
/// [`QuantError::DegenerateRange`].
pub fn find_breakpoint(cdf: &EmpiricalCdf, bits: u32, grid: usize) -> Result<Breakpoint, QuantError> {
    if grid < 2 {
        return Err(QuantError::InvalidGrid(grid));
    }
    if bits < 2 {
        return Err(QuantError::InvalidBits(bits));
    }
    let l = cdf.max_abs();
    if l == 0.0 {
        return Err(QuantError::DegenerateRange);
    }
    let mut best: Option<Breakpoint> = None;
    for i in 1..=grid / 2 {
        let p = l * i as f64 / grid as f64;
        let error = expected_error_piecewise(bits, l, p, cdf)?;
        if best.is_none_or(|b| error < b.error) {
            best = Some(Breakpoint { p, l, error });
        }
    }
    Ok(best.expect("grid has at least one point"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
    }

    /// Evenly spread magnitudes: an exact empirical stand-in for uniform on [-l, l].
    fn uniform_cdf(l: f64, n: usize) -> EmpiricalCdf {
        EmpiricalCdf::from_abs_values((0..n).map(|i| l * (i as f64 + 1.0) / n as f64).collect()).unwrap()
    }

    #[test]
    fn c_of_b_values() {
        assert!(close(c_of_b(1).unwrap(), 1.0 / 12.0, 1e-15));
        assert!(close(c_of_b(2).unwrap(), 1.0 / 108.0, 1e-15));
        assert!((c_of_b(2).unwrap() - 0.0092593).abs() < 1e-7);
        assert_eq!(c_of_b(0), Err(QuantError::InvalidBits(0)));
        for b in 1..31 {
            assert!(c_of_b(b + 1).unwrap() / c_of_b(b).unwrap() < 0.25);
        }
    }

    #[test]
    fn uniform_error_values() {
        let e = expected_error_uniform(8, -1.0, 1.0).unwrap();
        assert!(close(e, 4.0 / (12.0 * 255.0 * 255.0), 1e-15));
        assert!((e - 5.1262e-6).abs() < 1e-9);
        assert_eq!(expected_error_uniform(8, 0.5, 0.5).unwrap(), 0.0);
        for (b, d) in [(3, 0.7), (5, 2.5), (12, 0.01)] {
            assert_eq!(expected_error_uniform(b, 0.0, d).unwrap(), c_of_b(b).unwrap() * d * d);
        }
    }

    #[test]
    fn piecewise_error_hand_value() {
        // Half the magnitudes are <= 0.5; the second term vanishes at p = l/2.
        let cdf = EmpiricalCdf::from_abs_values(vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        let e = expected_error_piecewise(2, 1.0, 0.5, &cdf).unwrap();
        assert!(close(e, 0.25 / 12.0, 1e-15));
        assert!((e - 0.020833).abs() < 1e-6);
    }

    #[test]
    fn piecewise_error_preconditions() {
        let cdf = uniform_cdf(1.0, 10);
        assert!(expected_error_piecewise(1, 1.0, 0.5, &cdf).is_err());
        assert!(expected_error_piecewise(4, 1.0, 0.0, &cdf).is_err());
        assert!(expected_error_piecewise(4, 1.0, 1.0, &cdf).is_err());
        assert_eq!(EmpiricalCdf::from_abs_values(vec![]), Err(QuantError::EmptyCdf));
    }

    #[test]
    fn uniform_breakpoint_is_half_range() {
        let l = 0.8;
        let grid = DEFAULT_GRID_SIZE;
        let bp = find_breakpoint(&uniform_cdf(l, 100_000), 8, grid).unwrap();
        // (l-p)^2 + p(2p-l) = l^2 - 3lp + 3p^2 is minimized at p = l/2.
        let analytic = (1..=grid / 2)
            .map(|i| l * i as f64 / grid as f64)
            .min_by(|a, b| (l * l - 3.0 * l * a + 3.0 * a * a).total_cmp(&(l * l - 3.0 * l * b + 3.0 * b * b)))
            .unwrap();
        assert!((analytic - l / 2.0).abs() < 1e-12);
        assert!((bp.p - l / 2.0).abs() <= l / grid as f64 + 1e-12);
        assert_eq!(bp.l, l);
    }

    #[test]
    fn extreme_weights_breakpoint_matches_grid_oracle() {
        let l = 1.5;
        let grid = 40;
        let cdf = EmpiricalCdf::from_abs_values(vec![l; 64]).unwrap();
        let c = c_of_b(3).unwrap();
        // F(p) = 0 below l: C(b-1)[(l-p)^2 - l(2p-l)] at every grid point.
        let oracle = (1..=grid / 2)
            .map(|i| {
                let p = l * i as f64 / grid as f64;
                (p, c * ((l - p) * (l - p) - l * (2.0 * p - l)))
            })
            .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let bp = find_breakpoint(&cdf, 4, grid).unwrap();
        assert_eq!(bp.p, oracle.0);
        assert!(close(bp.error, oracle.1, 1e-12));
    }

    #[test]
    fn breakpoint_independent_of_bits() {
        let w: Vec<f64> = (0..500).map(|i| ((i * 7919 % 1000) as f64 / 1000.0).powi(3)).collect();
        let cdf = EmpiricalCdf::from_abs_values(w).unwrap();
        let p4 = find_breakpoint(&cdf, 4, 200).unwrap().p;
        for b in [2, 3, 6, 8, 12, 16] {
            assert_eq!(find_breakpoint(&cdf, b, 200).unwrap().p, p4);
        }
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let zeros = EmpiricalCdf::from_weights(&[0.0, -0.0]).unwrap();
        assert_eq!(find_breakpoint(&zeros, 8, 200), Err(QuantError::DegenerateRange));
        let cdf = uniform_cdf(1.0, 4);
        assert_eq!(find_breakpoint(&cdf, 8, 1), Err(QuantError::InvalidGrid(1)));
        assert_eq!(find_breakpoint(&cdf, 1, 200), Err(QuantError::InvalidBits(1)));
        let bp = find_breakpoint(&cdf, 8, 2).unwrap();
        assert_eq!(bp.p, 0.5);
    }

    #[test]
    fn dense_fraction_is_inclusive() {
        let cdf = EmpiricalCdf::from_weights(&[-0.5, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(cdf.dense_fraction(0.5), 0.75);
        assert_eq!(cdf.dense_fraction(0.1), 0.0);
        assert_eq!(cdf.max_abs(), 1.0);
    }

    proptest! {
        #[test]
        fn piecewise_error_non_negative(
            mags in prop::collection::vec(0.0f64..1.0, 1..200),
            l in 0.01f64..5.0,
            frac in 0.001f64..=0.5,
            bits in 2u32..=16,
        ) {
            let cdf = EmpiricalCdf::from_abs_values(mags.iter().map(|m| m * l).collect()).unwrap();
            let e = expected_error_piecewise(bits, l, frac * l, &cdf).unwrap();
            prop_assert!(e >= 0.0);
        }
    }
}
