//! Standard-normal helpers shared by the likelihood, priors and samplers.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn standard() -> &'static Normal {
    static STD: OnceLock<Normal> = OnceLock::new();
    STD.get_or_init(Normal::standard)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// Inverse of the standard normal cdf; `±inf` at 0 and 1.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        standard().inverse_cdf(p)
    }
}

/// `log N(x; mean, sd^2)`.
pub fn log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}
