//! Bivariate Clayton, Frank and Gumbel copulas.
//!
//! Clayton and Gumbel powers are handled in log space so that arguments near
//! the clipping bound do not overflow for strong dependence.

use crate::quadrature;

/// ln(e^a + e^b − 1) for a, b ≥ 0.
fn ln_sum_minus_one(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m < 1.0 {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
    }
}

/// ln(1 + e^z).
fn ln1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(super) mod clayton {
    use super::*;

    fn ln_a(delta: f64, u: f64, v: f64) -> f64 {
        ln_sum_minus_one(-delta * u.ln(), -delta * v.ln())
    }

    pub(in crate::bivariate) fn cdf(delta: f64, u: f64, v: f64) -> f64 {
        (-ln_a(delta, u, v) / delta).exp()
    }

    pub(in crate::bivariate) fn d1(delta: f64, u: f64, v: f64) -> f64 {
        (-(delta + 1.0) * u.ln() - (1.0 / delta + 1.0) * ln_a(delta, u, v)).exp()
    }

    pub(in crate::bivariate) fn ln_density(delta: f64, u: f64, v: f64) -> f64 {
        delta.ln_1p() - (delta + 1.0) * (u.ln() + v.ln()) - (1.0 / delta + 2.0) * ln_a(delta, u, v)
    }

    /// v = ((t^{−δ/(1+δ)} − 1) u^{−δ} + 1)^{−1/δ}.
    pub(in crate::bivariate) fn h_inverse(delta: f64, t: f64, u: f64) -> f64 {
        let p = (-delta / (1.0 + delta) * t.ln()).exp_m1();
        if p <= 0.0 {
            return 1.0;
        }
        let z = p.ln() - delta * u.ln();
        (-ln1p_exp(z) / delta).exp()
    }

    pub(in crate::bivariate) fn tau(delta: f64) -> f64 {
        delta / (delta + 2.0)
    }

    pub(in crate::bivariate) fn from_tau(tau: f64) -> f64 {
        2.0 * tau / (1.0 - tau)
    }
}

pub(super) mod frank {
    use super::*;

    /// e(x) = e^{−δx} − 1.
    fn e(delta: f64, x: f64) -> f64 {
        (-delta * x).exp_m1()
    }

    pub(in crate::bivariate) fn cdf(delta: f64, u: f64, v: f64) -> f64 {
        -(e(delta, u) * e(delta, v) / e(delta, 1.0)).ln_1p() / delta
    }

    pub(in crate::bivariate) fn d1(delta: f64, u: f64, v: f64) -> f64 {
        let (eu, ev) = (e(delta, u), e(delta, v));
        (-delta * u).exp() * ev / (e(delta, 1.0) + eu * ev)
    }

    pub(in crate::bivariate) fn ln_density(delta: f64, u: f64, v: f64) -> f64 {
        let e1 = e(delta, 1.0);
        let den = e1 + e(delta, u) * e(delta, v);
        (-delta * e1).ln() - delta * (u + v) - 2.0 * den.abs().ln()
    }

    pub(in crate::bivariate) fn h_inverse(delta: f64, t: f64, u: f64) -> f64 {
        let r = t * e(delta, 1.0) / (t + (1.0 - t) * (-delta * u).exp());
        -r.ln_1p() / delta
    }

    /// Debye function D1(x) = (1/x) ∫₀ˣ t / (eᵗ − 1) dt for x > 0.
    fn debye1(x: f64) -> f64 {
        let integrand = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
        quadrature::integrate(integrand, 0.0, x, 1e-15) / x
    }

    pub(in crate::bivariate) fn tau(delta: f64) -> f64 {
        if delta == 0.0 {
            return 0.0;
        }
        let d = delta.abs();
        let t = if d < 1e-4 {
            d / 9.0 - d.powi(3) / 900.0
        } else {
            1.0 - 4.0 / d * (1.0 - debye1(d))
        };
        t.copysign(delta)
    }
}

pub(super) mod gumbel {
    /// A = (x^δ + y^δ)^{1/δ} with x = −ln u, y = −ln v, computed without overflow.
    fn a(delta: f64, x: f64, y: f64) -> f64 {
        let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
        if hi == 0.0 {
            return 0.0;
        }
        hi * ((lo / hi).powf(delta).ln_1p() / delta).exp()
    }

    pub(in crate::bivariate) fn cdf(delta: f64, u: f64, v: f64) -> f64 {
        (-a(delta, -u.ln(), -v.ln())).exp()
    }

    pub(in crate::bivariate) fn d1(delta: f64, u: f64, v: f64) -> f64 {
        let (x, y) = (-u.ln(), -v.ln());
        let aa = a(delta, x, y);
        (-aa + (1.0 - delta) * aa.ln() + (delta - 1.0) * x.ln() + x).exp()
    }

    pub(in crate::bivariate) fn ln_density(delta: f64, u: f64, v: f64) -> f64 {
        let (x, y) = (-u.ln(), -v.ln());
        let aa = a(delta, x, y);
        -aa + x + y + (delta - 1.0) * (x.ln() + y.ln()) + (1.0 - 2.0 * delta) * aa.ln() + (aa + delta - 1.0).ln()
    }

    pub(in crate::bivariate) fn tau(delta: f64) -> f64 {
        1.0 - 1.0 / delta
    }

    pub(in crate::bivariate) fn from_tau(tau: f64) -> f64 {
        1.0 / (1.0 - tau)
    }
}
