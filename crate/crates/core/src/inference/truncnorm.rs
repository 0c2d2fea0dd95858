//! Normal probabilities over unions of intervals, in log space.

use libm::{erf, erfc};

use super::region::TruncationRegion;
use crate::error::{Error, Result};

const ASYMPTOTIC_FROM: f64 = 37.0;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln P(Z > x)` for a standard normal `Z`.
pub fn log_sf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < ASYMPTOTIC_FROM {
        return (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln();
    }
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * x2 - x.ln() - LN_SQRT_2PI + series.ln()
}

/// `ln P(lo < Z < hi)` for a standard normal `Z`.
pub fn log_mass(lo: f64, hi: f64) -> f64 {
    if !(lo < hi) {
        return f64::NEG_INFINITY;
    }
    if lo >= 0.0 {
        log_diff(log_sf(lo), log_sf(hi))
    } else if hi <= 0.0 {
        log_diff(log_sf(-hi), log_sf(-lo))
    } else {
        let s = std::f64::consts::SQRT_2;
        let half = |x: f64| {
            if x.is_infinite() {
                0.5
            } else {
                0.5 * erf(x / s)
            }
        };
        (half(hi) + half(-lo)).ln()
    }
}

/// `ln(e^a - e^b)` for `a ≥ b`.
fn log_diff(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| *x > f64::NEG_INFINITY).collect();
    let Some(max) = v.iter().copied().reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log masses of `N(mu, var)` on the parts of `region` below and above `x`.
fn split_log_mass(x: f64, mu: f64, var: f64, region: &TruncationRegion) -> (f64, f64) {
    let sd = var.sqrt();
    let std = |v: f64| (v - mu) / sd;
    let below = log_sum_exp(
        region
            .intervals()
            .iter()
            .filter(|(lo, _)| *lo < x)
            .map(|&(lo, hi)| log_mass(std(lo), std(hi.min(x)))),
    );
    let above = log_sum_exp(
        region
            .intervals()
            .iter()
            .filter(|(_, hi)| *hi > x)
            .map(|&(lo, hi)| log_mass(std(lo.max(x)), std(hi))),
    );
    (below, above)
}

/// Returns `(F(x), 1 - F(x))` of `N(mu, var)` truncated to `region`, each computed
/// without cancellation.
pub fn truncated_normal_cdf_sf(
    x: f64,
    mu: f64,
    var: f64,
    region: &TruncationRegion,
) -> Result<(f64, f64)> {
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let (below, above) = split_log_mass(x, mu, var, region);
    let total = log_sum_exp([below, above].into_iter());
    if total == f64::NEG_INFINITY || total.is_nan() {
        return Err(Error::VanishingMass);
    }
    let cdf = (below - total).exp().clamp(0.0, 1.0);
    let sf = (above - total).exp().clamp(0.0, 1.0);
    Ok((cdf, sf))
}

pub fn truncated_normal_cdf(x: f64, mu: f64, var: f64, region: &TruncationRegion) -> Result<f64> {
    truncated_normal_cdf_sf(x, mu, var, region).map(|(c, _)| c)
}

/// Standard normal upper tail `P(Z > x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}
