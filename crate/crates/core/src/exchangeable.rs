//! Exchangeable copula families {c_{1:n} : n ≥ 1} used for the within-cluster
//! dependence of the X ranks and of the residual ranks.
//!
//! The Gaussian family has an equicorrelation matrix and is evaluated through
//! its rank-one structure. Clayton and Frank are Archimedean:
//! c(w) = |ψ⁽ⁿ⁾(Σ ψ⁻¹(w_j))| Π |(ψ⁻¹)′(w_j)|, with closed-form derivatives of
//! the generator. Archimedean densities are limited to n ≤ 64.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bivariate::BivariateCopula;
use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_ln_pdf, norm_quantile};
use crate::transform::{ParamInfo, Transform};

/// Largest cluster size supported by the Archimedean densities.
pub const MAX_ARCHIMEDEAN_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExchangeableFamily {
    Independence,
    Normal,
    Clayton,
    Frank,
}

impl ExchangeableFamily {
    pub fn param_info(self) -> Vec<ParamInfo> {
        match self {
            ExchangeableFamily::Independence => vec![],
            ExchangeableFamily::Normal => vec![ParamInfo::new("rho", Transform::Logit)],
            ExchangeableFamily::Clayton | ExchangeableFamily::Frank => {
                vec![ParamInfo::new("delta", Transform::Log)]
            }
        }
    }

    pub fn n_params(self) -> usize {
        self.param_info().len()
    }

    pub fn build(self, p: &[f64]) -> Result<ExchangeableCopula> {
        if p.len() != self.n_params() {
            return Err(Error::InvalidParameter(format!(
                "exchangeable {self:?} takes {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let c = match self {
            ExchangeableFamily::Independence => ExchangeableCopula::Independence,
            ExchangeableFamily::Normal => ExchangeableCopula::Normal { rho: p[0] },
            ExchangeableFamily::Clayton => ExchangeableCopula::Clayton { delta: p[0] },
            ExchangeableFamily::Frank => ExchangeableCopula::Frank { delta: p[0] },
        };
        c.validate()?;
        Ok(c)
    }

    /// Member of the family whose bivariate margin has Kendall's tau `tau`,
    /// falling back to weak dependence when `tau` is not attainable.
    pub fn initial(self, tau: f64) -> ExchangeableCopula {
        let tau = tau.clamp(0.02, 0.9);
        match self {
            ExchangeableFamily::Independence => ExchangeableCopula::Independence,
            ExchangeableFamily::Normal => ExchangeableCopula::Normal {
                rho: (std::f64::consts::FRAC_PI_2 * tau).sin(),
            },
            ExchangeableFamily::Clayton => ExchangeableCopula::Clayton {
                delta: 2.0 * tau / (1.0 - tau),
            },
            ExchangeableFamily::Frank => match crate::bivariate::BivariateFamily::Frank.from_tau(tau) {
                Ok(BivariateCopula::Frank { delta }) => ExchangeableCopula::Frank { delta },
                _ => ExchangeableCopula::Frank { delta: 1.0 },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExchangeableCopula {
    Independence,
    /// Equicorrelated Gaussian copula, ρ ∈ [0, 1).
    Normal { rho: f64 },
    Clayton { delta: f64 },
    Frank { delta: f64 },
}

impl ExchangeableCopula {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ExchangeableCopula::Independence => Ok(()),
            ExchangeableCopula::Normal { rho } => {
                if (0.0..1.0).contains(&rho) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "exchangeable normal copula needs rho in [0, 1), got {rho}"
                    )))
                }
            }
            ExchangeableCopula::Clayton { delta } | ExchangeableCopula::Frank { delta } => {
                if delta > 0.0 && delta.is_finite() && delta < 700.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "exchangeable {self:?} needs 0 < delta < 700"
                    )))
                }
            }
        }
    }

    pub fn family(&self) -> ExchangeableFamily {
        match self {
            ExchangeableCopula::Independence => ExchangeableFamily::Independence,
            ExchangeableCopula::Normal { .. } => ExchangeableFamily::Normal,
            ExchangeableCopula::Clayton { .. } => ExchangeableFamily::Clayton,
            ExchangeableCopula::Frank { .. } => ExchangeableFamily::Frank,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            ExchangeableCopula::Independence => vec![],
            ExchangeableCopula::Normal { rho } => vec![rho],
            ExchangeableCopula::Clayton { delta } | ExchangeableCopula::Frank { delta } => vec![delta],
        }
    }

    /// The common bivariate margin.
    pub fn bivariate_margin(&self) -> BivariateCopula {
        match *self {
            ExchangeableCopula::Independence => BivariateCopula::Independence,
            ExchangeableCopula::Normal { rho } => BivariateCopula::Normal { rho },
            ExchangeableCopula::Clayton { delta } => BivariateCopula::Clayton { delta },
            ExchangeableCopula::Frank { delta } => BivariateCopula::Frank { delta },
        }
    }

    /// Kendall's tau of any pair of coordinates.
    pub fn pairwise_tau(&self) -> f64 {
        self.bivariate_margin().tau().expect("closed tau map")
    }

    /// Log density at w ∈ (0, 1)ⁿ. Dimensions 0 and 1 have density 1.
    pub fn ln_density(&self, w: &[f64]) -> Result<f64> {
        let n = w.len();
        if n <= 1 {
            return Ok(0.0);
        }
        Ok(match *self {
            ExchangeableCopula::Independence => 0.0,
            ExchangeableCopula::Normal { rho } => normal_ln_density(rho, w),
            ExchangeableCopula::Clayton { delta } => {
                check_dim(n)?;
                clayton_ln_density(delta, w)
            }
            ExchangeableCopula::Frank { delta } => {
                check_dim(n)?;
                frank_ln_density(delta, w)
            }
        })
    }

    pub fn density(&self, w: &[f64]) -> Result<f64> {
        for (j, &x) in w.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::Boundary(format!("argument {j} = {x} must lie strictly inside (0, 1)")));
            }
        }
        Ok(self.ln_density(w)?.exp())
    }

    /// Log density of the last coordinate `w` given the preceding ones.
    pub fn conditional_ln_density(&self, prev: &[f64], w: f64) -> Result<f64> {
        if let ExchangeableCopula::Normal { rho } = *self {
            let (mu0, sigma0) = conditional_moments_normal(rho, prev);
            let z = norm_quantile(w);
            return Ok(norm_ln_pdf((z - mu0) / sigma0) - sigma0.ln() - norm_ln_pdf(z));
        }
        let mut all = prev.to_vec();
        all.push(w);
        Ok(self.ln_density(&all)? - self.ln_density(prev)?)
    }

    /// Draws one n-vector. Draw order: Gaussian uses one common normal then n
    /// idiosyncratic normals; Archimedean uses one frailty then n exponentials.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        Ok(match *self {
            ExchangeableCopula::Independence => (0..n).map(|_| rng.sample(Open01)).collect(),
            ExchangeableCopula::Normal { rho } => {
                let a: f64 = rng.sample(StandardNormal);
                let (sa, se) = (rho.sqrt(), (1.0 - rho).sqrt());
                (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        norm_cdf(sa * a + se * e)
                    })
                    .collect()
            }
            ExchangeableCopula::Clayton { delta } => {
                let frailty = Gamma::new(1.0 / delta, 1.0)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?
                    .sample(rng);
                (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(Exp1);
                        // (1 + E/V)^{-1/δ}
                        (-(e / frailty).ln_1p() / delta).exp()
                    })
                    .collect()
            }
            ExchangeableCopula::Frank { delta } => {
                let frailty = sample_log_series(delta, rng);
                let c = -(-delta).exp_m1();
                (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(Exp1);
                        -(-c * (-e / frailty).exp()).ln_1p() / delta
                    })
                    .collect()
            }
        })
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n > MAX_ARCHIMEDEAN_DIM {
        Err(Error::Unsupported(format!(
            "Archimedean exchangeable densities support at most {MAX_ARCHIMEDEAN_DIM} coordinates, got {n}"
        )))
    } else {
        Ok(())
    }
}

/// log c for the equicorrelated Gaussian copula, using
/// det Σ = (1−ρ)^{n−1}(1+(n−1)ρ) and Σ⁻¹ = (I − ρJ/(1+(n−1)ρ)) / (1−ρ).
fn normal_ln_density(rho: f64, w: &[f64]) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let n = w.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for &x in w {
        let z = norm_quantile(x);
        s1 += z;
        s2 += z * z;
    }
    let g = 1.0 + (n - 1.0) * rho;
    let ln_det = (n - 1.0) * (-rho).ln_1p() + g.ln();
    let quad = (s2 - rho * s1 * s1 / g) / (1.0 - rho);
    -0.5 * ln_det - 0.5 * (quad - s2)
}

/// Conditional law of Φ⁻¹(W_n) given the normal scores of the first k = n − 1
/// coordinates under the equicorrelated Gaussian copula: N(μ0, σ0²) with
/// μ0 = kρ·z̄ / (1 + (k−1)ρ) and σ0² = (1−ρ)(1+kρ) / (1 + (k−1)ρ).
pub fn conditional_moments_normal(rho: f64, prev: &[f64]) -> (f64, f64) {
    let k = prev.len() as f64;
    if prev.is_empty() {
        return (0.0, 1.0);
    }
    let zbar = prev.iter().map(|&w| norm_quantile(w)).sum::<f64>() / k;
    moments_from_mean_score(rho, k, zbar)
}

/// Same as [`conditional_moments_normal`] from the count and mean normal score.
pub fn moments_from_mean_score(rho: f64, k: f64, zbar: f64) -> (f64, f64) {
    if k == 0.0 {
        return (0.0, 1.0);
    }
    let den = 1.0 + (k - 1.0) * rho;
    let mu0 = k * rho * zbar / den;
    let var = (1.0 - rho) * (1.0 + k * rho) / den;
    (mu0, var.sqrt())
}

/// ln(1 + Σ (e^{a_j} − 1)) for a_j ≥ 0 without overflow.
fn ln_one_plus_sum_expm1(a: &[f64]) -> f64 {
    let m = a.iter().cloned().fold(0.0f64, f64::max);
    if m < 50.0 {
        a.iter().map(|x| x.exp_m1()).sum::<f64>().ln_1p()
    } else {
        let em = (-m).exp();
        m + (em + a.iter().map(|x| (x - m).exp() - em).sum::<f64>()).ln()
    }
}

/// Clayton generator ψ(t) = (1 + t)^{−1/δ}.
fn clayton_ln_density(delta: f64, w: &[f64]) -> f64 {
    let n = w.len();
    let a: Vec<f64> = w.iter().map(|x| -delta * x.ln()).collect();
    let ln_sum_logs: f64 = w.iter().map(|x| x.ln()).sum();
    let ln_poch: f64 = (0..n).map(|k| (k as f64 * delta).ln_1p()).sum();
    ln_poch - (1.0 / delta + n as f64) * ln_one_plus_sum_expm1(&a) - (delta + 1.0) * ln_sum_logs
}

/// Eulerian numbers A(m, k), 0 ≤ k < m, for m up to MAX_ARCHIMEDEAN_DIM − 1.
fn eulerian_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rows: Vec<Vec<f64>> = vec![vec![1.0]];
        for m in 1..MAX_ARCHIMEDEAN_DIM {
            let prev = &rows[m - 1];
            let row: Vec<f64> = (0..m.max(1))
                .map(|k| {
                    let a = if k < prev.len() { (k + 1) as f64 * prev[k] } else { 0.0 };
                    let b = if k >= 1 && k - 1 < prev.len() { (m - k) as f64 * prev[k - 1] } else { 0.0 };
                    a + b
                })
                .collect();
            rows.push(row);
        }
        // Row 0 represents E_0(x) = 1, row 1 E_1(x) = 1, ...
        rows
    })
}

/// ln Li_{−m}(x) for x ∈ (0, 1): Li_{−m}(x) = x·E_m(x) / (1 − x)^{m+1}.
pub(crate) fn ln_polylog_neg(m: usize, ln_x: f64) -> f64 {
    let x = ln_x.exp();
    let coeffs = &eulerian_table()[m];
    let poly = coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
    ln_x + poly.ln() - (m as f64 + 1.0) * (-x).ln_1p()
}

/// Frank generator ψ(t) = −ln(1 − c e^{−t}) / δ with c = 1 − e^{−δ}, so that
/// ψ⁽ⁿ⁾(t) = (−1)ⁿ Li_{1−n}(c e^{−t}) / δ.
fn frank_ln_density(delta: f64, w: &[f64]) -> f64 {
    let n = w.len();
    let ln_c = (-(-delta).exp_m1()).ln();
    let mut ln_x = ln_c;
    let mut ln_jac = 0.0;
    for &x in w {
        ln_x += (-(-delta * x).exp_m1()).ln() - ln_c;
        ln_jac += delta.ln() - (delta * x).exp_m1().ln();
    }
    ln_polylog_neg(n - 1, ln_x) - delta.ln() + ln_jac
}

/// Logarithmic series draw with P(V = k) ∝ pᵏ / k, p = 1 − e^{−δ} (Kemp's
/// algorithm). Consumes two uniforms unless the first exceeds p.
fn sample_log_series<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> f64 {
    let p = -(-delta).exp_m1();
    let v: f64 = rng.sample(Open01);
    if v >= p {
        return 1.0;
    }
    let u: f64 = rng.sample(Open01);
    let q = -(-delta * u).exp_m1();
    if v <= q * q {
        (1.0 + v.ln() / q.ln()).floor().max(1.0)
    } else if v <= q {
        2.0
    } else {
        1.0
    }
}
