//! Normal-approximation inference helpers shared by estimators, the
//! simulation harness and the CLI.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

fn standard_normal() -> &'static Normal {
    static NORMAL: OnceLock<Normal> = OnceLock::new();
    NORMAL.get_or_init(|| Normal::new(0.0, 1.0).expect("valid standard normal"))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Two-sided normal confidence interval `estimate ± z * std_error` at the
/// given level (0.95 uses z = 1.95996...).
pub fn confidence_interval(estimate: f64, std_error: f64, level: f64) -> (f64, f64) {
    assert!(
        level > 0.0 && level < 1.0,
        "confidence level must be in (0, 1), got {level}"
    );
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    (estimate - z * std_error, estimate + z * std_error)
}

/// Two-sided normal p-value for H0: parameter = 0.
///
/// A zero standard error degenerates to 1 when the estimate is exactly zero
/// and 0 otherwise.
pub fn p_value(estimate: f64, std_error: f64) -> f64 {
    if std_error <= 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * (1.0 - normal_cdf((estimate / std_error).abs()))
}

/// Fraction of intervals containing `truth`.
pub fn coverage_probability(intervals: &[(f64, f64)], truth: f64) -> f64 {
    if intervals.is_empty() {
        return f64::NAN;
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    hits as f64 / intervals.len() as f64
}
