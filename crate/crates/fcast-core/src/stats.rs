//! Shared statistical primitives: normal tail probabilities and the
//! Newey-West long-run variance used by the forecast-accuracy tests.

use crate::linalg::mean;

/// Standard normal CDF via erf.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided p-value for a standard-normal statistic.
pub fn p_two_sided(z: f64) -> f64 {
    2.0 * norm_cdf(-z.abs())
}

/// One-sided p-value for H1: mean > 0.
pub fn p_one_sided_pos(z: f64) -> f64 {
    1.0 - norm_cdf(z)
}

/// Newey-West (Bartlett-kernel) variance of the sample mean of `d` with `lags`
/// autocovariance terms. Returns Var(d̄), not Var(d).
pub fn newey_west_var_of_mean(d: &[f64], lags: usize) -> f64 {
    let n = d.len();
    assert!(n > 1);
    let m = mean(d);
    let mut s = 0.0;
    for t in 0..n {
        s += (d[t] - m) * (d[t] - m);
    }
    let mut lrv = s / n as f64;
    for l in 1..=lags.min(n - 1) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let mut g = 0.0;
        for t in l..n {
            g += (d[t] - m) * (d[t - l] - m);
        }
        lrv += 2.0 * w * g / n as f64;
    }
    // Guard: the Bartlett estimate is PSD in theory; numerical noise on tiny
    // samples can still push it below zero.
    lrv.max(1e-300) / n as f64
}

/// Linear-interpolation quantile of an ascending-sorted slice (the numpy
/// default). q is clamped to [0,1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// The truncation rule ⌊4(n/100)^{2/9}⌋ used when no lag count is supplied.
pub fn default_nw_lags(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_cdf_reference_points() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-12);
        // Φ(1.959964) ≈ 0.975
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-9);
        assert!((norm_cdf(-1.959963984540054) - 0.025).abs() < 1e-9);
    }

    #[test]
    fn nw_zero_lags_is_plain_variance_of_mean() {
        let d = [1.0, 2.0, 3.0, 4.0];
        let v = newey_west_var_of_mean(&d, 0);
        // population variance (n denominator) over n
        let m = mean(&d);
        let pop: f64 = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
        assert!((v - pop / 4.0).abs() < 1e-12);
    }

    #[test]
    fn nw_matches_direct_hac_summation() {
        // Independent oracle: direct weighted autocovariance sum.
        let d: Vec<f64> = (0..40).map(|i| ((i * 37 % 11) as f64) * 0.3 - 1.0).collect();
        let lags = 3;
        let m = mean(&d);
        let n = d.len() as f64;
        let mut lrv = 0.0;
        for l in 0..=lags {
            let w = if l == 0 { 1.0 } else { 1.0 - l as f64 / (lags as f64 + 1.0) };
            let mut g = 0.0;
            for t in l..d.len() {
                g += (d[t] - m) * (d[t - l] - m);
            }
            g /= n;
            lrv += if l == 0 { g } else { 2.0 * w * g };
        }
        let v = newey_west_var_of_mean(&d, lags);
        assert!((v - lrv / n).abs() < 1e-14);
    }

    #[test]
    fn lag_rule_examples() {
        assert_eq!(default_nw_lags(100), 4);
        assert_eq!(default_nw_lags(72), 3); // 4·0.72^{2/9} ≈ 3.72
    }
}
