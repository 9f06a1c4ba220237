//! Standard normal helpers for z tests and confidence intervals.

use statrs::distribution::{ContinuousCDF, Normal};
use libm::erfc;

/// Two-sided p-value of a z statistic against the standard normal.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Critical value `z*` for a two-sided interval at `level`.
pub fn critical_value(level: f64) -> f64 {
    assert!(level > 0.0 && level < 1.0, "confidence level must be in (0, 1)");
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(0.5 + level / 2.0)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}
