//! Gaussian copula with correlation ρ ∈ (−1, 1).

use crate::special::{bvn_cdf, norm_cdf, norm_quantile};

pub(super) fn cdf(rho: f64, u: f64, v: f64) -> f64 {
    bvn_cdf(norm_quantile(u), norm_quantile(v), rho)
}

/// ∂C/∂u = Φ((Φ⁻¹(v) − ρΦ⁻¹(u)) / √(1 − ρ²)).
pub(super) fn d1(rho: f64, u: f64, v: f64) -> f64 {
    let (x, y) = (norm_quantile(u), norm_quantile(v));
    norm_cdf((y - rho * x) / (1.0 - rho * rho).sqrt())
}

pub(super) fn ln_density(rho: f64, u: f64, v: f64) -> f64 {
    let (x, y) = (norm_quantile(u), norm_quantile(v));
    let s = 1.0 - rho * rho;
    -0.5 * s.ln() - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * s)
}

/// Closed-form inverse of the h-function: Φ(Φ⁻¹(t)√(1 − ρ²) + ρΦ⁻¹(u)).
pub(super) fn h_inverse(rho: f64, t: f64, u: f64) -> f64 {
    norm_cdf(norm_quantile(t) * (1.0 - rho * rho).sqrt() + rho * norm_quantile(u))
}

pub(super) fn tau(rho: f64) -> f64 {
    std::f64::consts::FRAC_2_PI * rho.asin()
}

pub(super) fn from_tau(tau: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * tau).sin()
}
