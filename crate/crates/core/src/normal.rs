//! Standard normal tail probabilities and extreme upper quantiles.
//!
//! Control limits sit at tail masses near 1e-14, far outside the validity of
//! the usual rational inverse-CDF approximations, so the quantile is found by
//! bisection on the complementary CDF written through `erfc`.

use std::f64::consts::SQRT_2;

/// `P(Z > z)` for standard normal `Z`.
pub fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// `P(Z <= z)` for standard normal `Z`.
pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// The `1 - c` quantile of the standard normal, i.e. the `z` with
/// `P(Z > z) = c`. Returns `None` for `c` outside `(0, 1)`.
pub fn upper_quantile(c: f64) -> Option<f64> {
    if !(c > 0.0 && c < 1.0) {
        return None;
    }
    if c == 0.5 {
        return Some(0.0);
    }
    if c > 0.5 {
        return upper_quantile(1.0 - c).map(|z| -z);
    }
    // upper_tail is strictly decreasing; erfc underflows only past z ~ 38.
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if upper_tail(mid) > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
