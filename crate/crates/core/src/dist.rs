//! Log densities used by the priors, the filter and the Poisson model.

use libm::erfc;
use statrs::function::gamma::ln_gamma;

use crate::formula::Prior;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn normal_lpdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

/// `ln Φ(z)` for the standard normal CDF, accurate in the lower tail.
pub fn log_ndtr(z: f64) -> f64 {
    if z > -20.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills-ratio expansion
        let z2 = z * z;
        -0.5 * z2 - 0.5 * LN_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Normal density truncated to `[0, ∞)`; `-∞` outside the support.
pub fn truncated_normal_lpdf(x: f64, prior: Prior) -> f64 {
    if x < 0.0 || x.is_nan() {
        return f64::NEG_INFINITY;
    }
    normal_lpdf(x, prior.mean, prior.sd * prior.sd) - log_ndtr(prior.mean / prior.sd)
}

/// Poisson log-pmf of count `y` at rate `exp(log_rate)`.
pub fn poisson_lpmf(y: f64, log_rate: f64) -> f64 {
    y * log_rate - log_rate.exp() - ln_gamma(y + 1.0)
}
