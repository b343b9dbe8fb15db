//! Bivariate copulas linking X and Y on a unit.
//!
//! Base families (independence, Gaussian, Clayton, Frank, Gumbel) can be
//! wrapped by the Khoudraji asymmetrization
//! C(u, v) = u^{1−κ1} v^{1−κ2} C_base(u^{κ1}, v^{κ2})
//! and by the survival (180° rotation) transform
//! C(u, v) = u + v − 1 + C_base(1 − u, 1 − v).
//!
//! Internally all partial derivatives use the argument order (u, v):
//! `d1 = ∂C/∂u` (the h-function C_{2|1}(v|u)) and `d2 = ∂C/∂v`.

mod archimedean;
mod normal;

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots;
use crate::transform::{ParamInfo, Transform};

use archimedean::{clayton, frank, gumbel};

/// Which Khoudraji exponents are free: `U` fixes κ2 = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KhoudrajiShapes {
    U,
    Uv,
}

/// A bivariate copula family without parameter values.
///
/// Serializes as its [`name`](BivariateFamily::name), e.g.
/// `"survival-khoudraji2-normal"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BivariateFamily {
    Independence,
    Normal,
    Clayton,
    Frank,
    Gumbel,
    Khoudraji {
        base: Box<BivariateFamily>,
        shapes: KhoudrajiShapes,
    },
    Survival {
        base: Box<BivariateFamily>,
    },
}

impl BivariateFamily {
    pub fn khoudraji(base: BivariateFamily, shapes: KhoudrajiShapes) -> Self {
        BivariateFamily::Khoudraji {
            base: Box::new(base),
            shapes,
        }
    }

    pub fn survival(base: BivariateFamily) -> Self {
        BivariateFamily::Survival { base: Box::new(base) }
    }

    pub fn n_params(&self) -> usize {
        self.param_info().len()
    }

    /// Names and optimizer transforms of the natural parameters, in packing order.
    pub fn param_info(&self) -> Vec<ParamInfo> {
        match self {
            BivariateFamily::Independence => vec![],
            BivariateFamily::Normal => vec![ParamInfo::new("rho", Transform::Fisher)],
            BivariateFamily::Clayton => vec![ParamInfo::new("delta", Transform::Log)],
            BivariateFamily::Frank => vec![ParamInfo::new("delta", Transform::Identity)],
            BivariateFamily::Gumbel => vec![ParamInfo::new("delta", Transform::LogShifted)],
            BivariateFamily::Khoudraji { base, shapes } => {
                let mut info = base.param_info();
                info.push(ParamInfo::new("kappa1", Transform::Logit));
                if *shapes == KhoudrajiShapes::Uv {
                    info.push(ParamInfo::new("kappa2", Transform::Logit));
                }
                info
            }
            BivariateFamily::Survival { base } => base.param_info(),
        }
    }

    /// Builds a copula from natural parameters in packing order.
    pub fn build(&self, p: &[f64]) -> Result<BivariateCopula> {
        if p.len() != self.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{} takes {} parameters, got {}",
                self.name(),
                self.n_params(),
                p.len()
            )));
        }
        let c = match self {
            BivariateFamily::Independence => BivariateCopula::Independence,
            BivariateFamily::Normal => BivariateCopula::Normal { rho: p[0] },
            BivariateFamily::Clayton => BivariateCopula::Clayton { delta: p[0] },
            BivariateFamily::Frank => BivariateCopula::Frank { delta: p[0] },
            BivariateFamily::Gumbel => BivariateCopula::Gumbel { delta: p[0] },
            BivariateFamily::Khoudraji { base, shapes } => {
                let nb = base.n_params();
                let base = base.build(&p[..nb])?;
                let kappa2 = match shapes {
                    KhoudrajiShapes::U => 1.0,
                    KhoudrajiShapes::Uv => p[nb + 1],
                };
                BivariateCopula::Khoudraji {
                    base: Box::new(base),
                    kappa1: p[nb],
                    kappa2,
                }
            }
            BivariateFamily::Survival { base } => BivariateCopula::Survival {
                base: Box::new(base.build(p)?),
            },
        };
        c.validate()?;
        Ok(c)
    }

    /// Human-readable family name, e.g. `survival-khoudraji-normal`.
    pub fn name(&self) -> String {
        match self {
            BivariateFamily::Independence => "independence".into(),
            BivariateFamily::Normal => "normal".into(),
            BivariateFamily::Clayton => "clayton".into(),
            BivariateFamily::Frank => "frank".into(),
            BivariateFamily::Gumbel => "gumbel".into(),
            BivariateFamily::Khoudraji { base, shapes } => match shapes {
                KhoudrajiShapes::U => format!("khoudraji-{}", base.name()),
                KhoudrajiShapes::Uv => format!("khoudraji2-{}", base.name()),
            },
            BivariateFamily::Survival { base } => format!("survival-{}", base.name()),
        }
    }

    /// The copula of this family with Kendall's tau equal to `tau`.
    ///
    /// Khoudraji families have no closed tau map and return an error.
    pub fn from_tau(&self, tau: f64) -> Result<BivariateCopula> {
        let out_of_range = || Error::Domain(format!("tau = {tau} is not attainable by the {} family", self.name()));
        if !(tau > -1.0 && tau < 1.0) {
            return Err(out_of_range());
        }
        let c = match self {
            BivariateFamily::Independence => {
                if tau != 0.0 {
                    return Err(out_of_range());
                }
                BivariateCopula::Independence
            }
            BivariateFamily::Normal => BivariateCopula::Normal { rho: normal::from_tau(tau) },
            BivariateFamily::Clayton => {
                if tau <= 0.0 {
                    return Err(out_of_range());
                }
                BivariateCopula::Clayton { delta: clayton::from_tau(tau) }
            }
            BivariateFamily::Gumbel => {
                if tau < 0.0 {
                    return Err(out_of_range());
                }
                BivariateCopula::Gumbel { delta: gumbel::from_tau(tau) }
            }
            BivariateFamily::Frank => {
                if tau == 0.0 {
                    return Err(Error::Domain(
                        "Frank copula with tau = 0 is the independence copula (delta = 0 excluded)".into(),
                    ));
                }
                let target = tau.abs();
                let mut hi = 1.0;
                while frank::tau(hi) < target {
                    hi *= 2.0;
                    if hi > 1e6 {
                        return Err(out_of_range());
                    }
                }
                let d = roots::bisect(|d| frank::tau(d) - target, 0.0, hi, 1e-15)?;
                BivariateCopula::Frank { delta: d.copysign(tau) }
            }
            BivariateFamily::Khoudraji { .. } => {
                return Err(Error::Unsupported(
                    "Khoudraji copulas have no closed tau map; use tau_monte_carlo".into(),
                ))
            }
            BivariateFamily::Survival { base } => BivariateCopula::Survival {
                base: Box::new(base.from_tau(tau)?),
            },
        };
        Ok(c)
    }

    /// A reasonable starting value for likelihood maximization given a pooled
    /// Kendall's tau estimate.
    pub fn initial(&self, tau: f64) -> BivariateCopula {
        let tau = tau.clamp(-0.9, 0.9);
        let fallback = |f: &BivariateFamily| -> BivariateCopula {
            match f {
                BivariateFamily::Clayton => BivariateCopula::Clayton { delta: 0.5 },
                BivariateFamily::Gumbel => BivariateCopula::Gumbel { delta: 1.2 },
                BivariateFamily::Frank => BivariateCopula::Frank { delta: 1.0 },
                _ => BivariateCopula::Normal { rho: 0.2 },
            }
        };
        match self {
            BivariateFamily::Independence => BivariateCopula::Independence,
            BivariateFamily::Khoudraji { base, shapes } => {
                // With κ < 1 the attainable tau shrinks; start the base a bit stronger.
                let b = base.initial((tau * 1.2).clamp(-0.9, 0.9));
                BivariateCopula::Khoudraji {
                    base: Box::new(b),
                    kappa1: 0.8,
                    kappa2: if *shapes == KhoudrajiShapes::U { 1.0 } else { 0.9 },
                }
            }
            BivariateFamily::Survival { base } => BivariateCopula::Survival {
                base: Box::new(base.initial(tau)),
            },
            f => match f.from_tau(tau) {
                Ok(c) if c.validate().is_ok() => c,
                _ => fallback(f),
            },
        }
    }
}

impl std::str::FromStr for BivariateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(rest) = s.strip_prefix("survival-") {
            return Ok(BivariateFamily::survival(rest.parse()?));
        }
        if let Some(rest) = s.strip_prefix("khoudraji2-") {
            return Ok(BivariateFamily::khoudraji(rest.parse()?, KhoudrajiShapes::Uv));
        }
        if let Some(rest) = s.strip_prefix("khoudraji-") {
            return Ok(BivariateFamily::khoudraji(rest.parse()?, KhoudrajiShapes::U));
        }
        Ok(match s.as_str() {
            "independence" => BivariateFamily::Independence,
            "normal" => BivariateFamily::Normal,
            "clayton" => BivariateFamily::Clayton,
            "frank" => BivariateFamily::Frank,
            "gumbel" => BivariateFamily::Gumbel,
            _ => return Err(Error::InvalidParameter(format!("unknown bivariate copula family '{s}'"))),
        })
    }
}

impl TryFrom<String> for BivariateFamily {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BivariateFamily> for String {
    fn from(f: BivariateFamily) -> String {
        f.name()
    }
}

/// A bivariate copula with parameter values.
#[derive(Debug, Clone, PartialEq)]
pub enum BivariateCopula {
    Independence,
    Normal { rho: f64 },
    Clayton { delta: f64 },
    Frank { delta: f64 },
    Gumbel { delta: f64 },
    Khoudraji { base: Box<BivariateCopula>, kappa1: f64, kappa2: f64 },
    Survival { base: Box<BivariateCopula> },
}

fn check_interior(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Boundary(format!("{name} = {x} must lie strictly inside (0, 1)")))
    }
}

impl BivariateCopula {
    pub fn khoudraji(base: BivariateCopula, kappa1: f64, kappa2: f64) -> Result<Self> {
        let c = BivariateCopula::Khoudraji {
            base: Box::new(base),
            kappa1,
            kappa2,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn survival(base: BivariateCopula) -> Self {
        BivariateCopula::Survival { base: Box::new(base) }
    }

    /// Checks the parameter constraints of every layer.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            BivariateCopula::Independence => Ok(()),
            BivariateCopula::Normal { rho } => {
                if rho.abs() < 1.0 {
                    Ok(())
                } else {
                    bad(format!("normal copula needs |rho| < 1, got {rho}"))
                }
            }
            BivariateCopula::Clayton { delta } => {
                if *delta > 0.0 && delta.is_finite() {
                    Ok(())
                } else {
                    bad(format!("Clayton copula needs delta > 0, got {delta}"))
                }
            }
            BivariateCopula::Frank { delta } => {
                if *delta != 0.0 && delta.is_finite() && delta.abs() < 700.0 {
                    Ok(())
                } else {
                    bad(format!("Frank copula needs 0 < |delta| < 700, got {delta}"))
                }
            }
            BivariateCopula::Gumbel { delta } => {
                if *delta >= 1.0 && delta.is_finite() {
                    Ok(())
                } else {
                    bad(format!("Gumbel copula needs delta >= 1, got {delta}"))
                }
            }
            BivariateCopula::Khoudraji { base, kappa1, kappa2 } => {
                for (name, k) in [("kappa1", kappa1), ("kappa2", kappa2)] {
                    if !(*k > 0.0 && *k <= 1.0) {
                        return bad(format!("Khoudraji {name} must lie in (0, 1], got {k}"));
                    }
                }
                base.validate()
            }
            BivariateCopula::Survival { base } => base.validate(),
        }
    }

    pub fn family(&self) -> BivariateFamily {
        match self {
            BivariateCopula::Independence => BivariateFamily::Independence,
            BivariateCopula::Normal { .. } => BivariateFamily::Normal,
            BivariateCopula::Clayton { .. } => BivariateFamily::Clayton,
            BivariateCopula::Frank { .. } => BivariateFamily::Frank,
            BivariateCopula::Gumbel { .. } => BivariateFamily::Gumbel,
            BivariateCopula::Khoudraji { base, kappa2, .. } => BivariateFamily::Khoudraji {
                base: Box::new(base.family()),
                shapes: if *kappa2 == 1.0 {
                    KhoudrajiShapes::U
                } else {
                    KhoudrajiShapes::Uv
                },
            },
            BivariateCopula::Survival { base } => BivariateFamily::Survival {
                base: Box::new(base.family()),
            },
        }
    }

    /// Natural parameters in the packing order of `family`.
    pub fn params_for(&self, family: &BivariateFamily) -> Vec<f64> {
        match (self, family) {
            (BivariateCopula::Normal { rho }, _) => vec![*rho],
            (BivariateCopula::Clayton { delta }, _)
            | (BivariateCopula::Frank { delta }, _)
            | (BivariateCopula::Gumbel { delta }, _) => vec![*delta],
            (BivariateCopula::Khoudraji { base, kappa1, kappa2 }, BivariateFamily::Khoudraji { base: fb, shapes }) => {
                let mut p = base.params_for(fb);
                p.push(*kappa1);
                if *shapes == KhoudrajiShapes::Uv {
                    p.push(*kappa2);
                }
                p
            }
            (BivariateCopula::Survival { base }, BivariateFamily::Survival { base: fb }) => base.params_for(fb),
            _ => vec![],
        }
    }

    /// Natural parameters in the packing order of the copula's own family.
    pub fn params(&self) -> Vec<f64> {
        self.params_for(&self.family())
    }

    /// Copula distribution function, defined on the closed unit square.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        if u == 0.0 || v == 0.0 {
            return 0.0;
        }
        if u == 1.0 {
            return v;
        }
        if v == 1.0 {
            return u;
        }
        let lo = (u + v - 1.0).max(0.0);
        self.cdf_interior(u, v).clamp(lo, u.min(v))
    }

    fn cdf_interior(&self, u: f64, v: f64) -> f64 {
        match self {
            BivariateCopula::Independence => u * v,
            BivariateCopula::Normal { rho } => normal::cdf(*rho, u, v),
            BivariateCopula::Clayton { delta } => clayton::cdf(*delta, u, v),
            BivariateCopula::Frank { delta } => frank::cdf(*delta, u, v),
            BivariateCopula::Gumbel { delta } => gumbel::cdf(*delta, u, v),
            BivariateCopula::Khoudraji { base, kappa1, kappa2 } => {
                u.powf(1.0 - kappa1) * v.powf(1.0 - kappa2) * base.cdf(u.powf(*kappa1), v.powf(*kappa2))
            }
            BivariateCopula::Survival { base } => u + v - 1.0 + base.cdf(1.0 - u, 1.0 - v),
        }
    }

    /// ∂C/∂u at an interior point, i.e. the h-function C_{2|1}(v|u).
    pub fn d1(&self, u: f64, v: f64) -> f64 {
        match self {
            BivariateCopula::Independence => v,
            BivariateCopula::Normal { rho } => normal::d1(*rho, u, v),
            BivariateCopula::Clayton { delta } => clayton::d1(*delta, u, v),
            BivariateCopula::Frank { delta } => frank::d1(*delta, u, v),
            BivariateCopula::Gumbel { delta } => gumbel::d1(*delta, u, v),
            BivariateCopula::Khoudraji { base, kappa1: a, kappa2: b } => {
                let (s, t) = (u.powf(*a), v.powf(*b));
                v.powf(1.0 - b) * ((1.0 - a) * base.cdf(s, t) / s + a * base.d1(s, t))
            }
            BivariateCopula::Survival { base } => 1.0 - base.d1(1.0 - u, 1.0 - v),
        }
    }

    /// ∂C/∂v at an interior point, i.e. C_{1|2}(u|v).
    pub fn d2(&self, u: f64, v: f64) -> f64 {
        match self {
            BivariateCopula::Khoudraji { base, kappa1: a, kappa2: b } => {
                let (s, t) = (u.powf(*a), v.powf(*b));
                u.powf(1.0 - a) * ((1.0 - b) * base.cdf(s, t) / t + b * base.d2(s, t))
            }
            BivariateCopula::Survival { base } => 1.0 - base.d2(1.0 - u, 1.0 - v),
            // The remaining families are exchangeable in (u, v).
            c => c.d1(v, u),
        }
    }

    /// Log density at an interior point (no boundary checks).
    pub fn ln_density(&self, u: f64, v: f64) -> f64 {
        match self {
            BivariateCopula::Independence => 0.0,
            BivariateCopula::Normal { rho } => normal::ln_density(*rho, u, v),
            BivariateCopula::Clayton { delta } => clayton::ln_density(*delta, u, v),
            BivariateCopula::Frank { delta } => frank::ln_density(*delta, u, v),
            BivariateCopula::Gumbel { delta } => gumbel::ln_density(*delta, u, v),
            BivariateCopula::Khoudraji { base, kappa1: a, kappa2: b } => {
                // Product rule on u^{1-a} v^{1-b} C(u^a, v^b); all four terms are >= 0.
                let (s, t) = (u.powf(*a), v.powf(*b));
                let (ac, bc) = (1.0 - a, 1.0 - b);
                let c = base.cdf(s, t);
                let dens = ac * bc * c / (s * t)
                    + a * bc * base.d1(s, t) / t
                    + ac * b * base.d2(s, t) / s
                    + a * b * base.ln_density(s, t).exp();
                dens.ln()
            }
            BivariateCopula::Survival { base } => base.ln_density(1.0 - u, 1.0 - v),
        }
    }

    /// Copula density; boundary arguments are an error.
    pub fn density(&self, u: f64, v: f64) -> Result<f64> {
        check_interior("u", u)?;
        check_interior("v", v)?;
        Ok(self.ln_density(u, v).exp())
    }

    /// h(v|u) = C_{2|1}(v|u) = ∂C(u, v)/∂u.
    pub fn h(&self, v: f64, u: f64) -> Result<f64> {
        check_interior("u", u)?;
        check_interior("v", v)?;
        Ok(self.d1(u, v).clamp(0.0, 1.0))
    }

    /// Solves h(v|u) = t for v.
    pub fn h_inverse(&self, t: f64, u: f64) -> Result<f64> {
        check_interior("t", t)?;
        check_interior("u", u)?;
        self.h_inverse_interior(t, u)
    }

    pub(crate) fn h_inverse_interior(&self, t: f64, u: f64) -> Result<f64> {
        Ok(match self {
            BivariateCopula::Independence => t,
            BivariateCopula::Normal { rho } => normal::h_inverse(*rho, t, u),
            BivariateCopula::Clayton { delta } => clayton::h_inverse(*delta, t, u),
            BivariateCopula::Frank { delta } => frank::h_inverse(*delta, t, u),
            BivariateCopula::Survival { base } => 1.0 - base.h_inverse_interior(1.0 - t, 1.0 - u)?,
            BivariateCopula::Gumbel { .. } | BivariateCopula::Khoudraji { .. } => self.h_inverse_numeric(t, u)?,
        })
    }

    fn h_inverse_numeric(&self, t: f64, u: f64) -> Result<f64> {
        roots::newton_bisect(
            |v| {
                if v <= 0.0 {
                    (-t, 0.0)
                } else if v >= 1.0 {
                    (1.0 - t, 0.0)
                } else {
                    (self.d1(u, v) - t, self.ln_density(u, v).exp())
                }
            },
            0.0,
            1.0,
            1e-15,
        )
        .map_err(|e| match e {
            Error::Bracket { lo, hi, context } => Error::Bracket {
                lo,
                hi,
                context: format!("h-function inverse of {self:?} at t={t}, u={u}: {context}"),
            },
            e => e,
        })
    }

    /// Draws (u, v) by the conditional method: v = h⁻¹(t|u) for independent
    /// uniforms u, t. Uses exactly two uniforms per draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, f64)> {
        let u: f64 = rng.sample(Open01);
        let t: f64 = rng.sample(Open01);
        Ok((u, self.h_inverse_interior(t, u)?))
    }

    /// Kendall's tau from the closed-form parameter map.
    pub fn tau(&self) -> Result<f64> {
        Ok(match self {
            BivariateCopula::Independence => 0.0,
            BivariateCopula::Normal { rho } => normal::tau(*rho),
            BivariateCopula::Clayton { delta } => clayton::tau(*delta),
            BivariateCopula::Frank { delta } => frank::tau(*delta),
            BivariateCopula::Gumbel { delta } => gumbel::tau(*delta),
            BivariateCopula::Survival { base } => base.tau()?,
            BivariateCopula::Khoudraji { .. } => {
                return Err(Error::Unsupported(
                    "Khoudraji copulas have no closed tau map; use tau_monte_carlo".into(),
                ))
            }
        })
    }

    /// Monte Carlo estimate of Kendall's tau as 4·E[C(U, V)] − 1 with its
    /// standard error, from `n` draws.
    pub fn tau_monte_carlo<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(f64, f64)> {
        if n < 2 {
            return Err(Error::InsufficientData("tau_monte_carlo needs n >= 2".into()));
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (u, v) = self.sample(rng)?;
            let z = self.cdf(u, v);
            sum += z;
            sum_sq += z * z;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = (sum_sq - nf * mean * mean) / (nf - 1.0);
        Ok((4.0 * mean - 1.0, 4.0 * (var.max(0.0) / nf).sqrt()))
    }
}
