//! Binomial proportion summaries.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Half-width of the Wilson 95% score interval for `hits` out of `trials`.
pub fn wilson_half_width(hits: u64, trials: u64) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

/// Center of the Wilson 95% score interval.
pub fn wilson_center(hits: u64, trials: u64) -> f64 {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    (p + z2 / (2.0 * n)) / (1.0 + z2 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wilson_reference_values() {
        // 10 of 100: interval [0.0552, 0.1744].
        let hw = wilson_half_width(10, 100);
        let c = wilson_center(10, 100);
        assert_abs_diff_eq!(c - hw, 0.055_229, epsilon = 1e-5);
        assert_abs_diff_eq!(c + hw, 0.174_367, epsilon = 1e-5);
    }

    #[test]
    fn zero_hits_has_positive_width() {
        assert!(wilson_half_width(0, 1000) > 0.0);
        assert!(wilson_half_width(0, 0).is_nan());
    }
}
