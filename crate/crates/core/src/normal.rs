//! Standard normal density and tails.
//!
//! Upper tails are evaluated through `erfc` so that `1 - Φ(x)` keeps full
//! relative accuracy far out in the tail.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// φ(x)
#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ(x)
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x)
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}
