//! Parametric univariate margins: Normal, Beta and the generalized beta GB3.
//!
//! GB3(a, b, λ) is the law of Y = X / (λ + (1 − λ) X) for X ~ Beta(a, b);
//! λ = 1 gives back the Beta distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, OptimOptions};
use crate::special::{beta_inc, beta_inc_inv, ln_beta, norm_cdf, norm_ln_pdf, norm_quantile};
use crate::transform::{ParamInfo, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginFamily {
    Normal,
    Beta,
    Gb3,
}

impl MarginFamily {
    pub fn n_params(self) -> usize {
        match self {
            MarginFamily::Normal | MarginFamily::Beta => 2,
            MarginFamily::Gb3 => 3,
        }
    }

    pub fn param_info(self) -> Vec<ParamInfo> {
        match self {
            MarginFamily::Normal => vec![
                ParamInfo::new("mu", Transform::Identity),
                ParamInfo::new("sigma", Transform::Log),
            ],
            MarginFamily::Beta => vec![
                ParamInfo::new("a", Transform::Log),
                ParamInfo::new("b", Transform::Log),
            ],
            MarginFamily::Gb3 => vec![
                ParamInfo::new("a", Transform::Log),
                ParamInfo::new("b", Transform::Log),
                ParamInfo::new("lambda", Transform::Logit),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    Normal { mu: f64, sigma: f64 },
    Beta { a: f64, b: f64 },
    Gb3 { a: f64, b: f64, lambda: f64 },
}

impl Margin {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::from_params(MarginFamily::Normal, &[mu, sigma])
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Self::from_params(MarginFamily::Beta, &[a, b])
    }

    pub fn gb3(a: f64, b: f64, lambda: f64) -> Result<Self> {
        Self::from_params(MarginFamily::Gb3, &[a, b, lambda])
    }

    /// Builds a margin from its natural parameters, checking constraints.
    pub fn from_params(family: MarginFamily, p: &[f64]) -> Result<Self> {
        if p.len() != family.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{family:?} margin takes {} parameters, got {}",
                family.n_params(),
                p.len()
            )));
        }
        let pos = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::InvalidParameter(format!("{family:?} {name} must be > 0, got {v}")))
            }
        };
        Ok(match family {
            MarginFamily::Normal => {
                if !p[0].is_finite() {
                    return Err(Error::InvalidParameter(format!("normal mean {} is not finite", p[0])));
                }
                Margin::Normal {
                    mu: p[0],
                    sigma: pos(p[1], "sigma")?,
                }
            }
            MarginFamily::Beta => Margin::Beta {
                a: pos(p[0], "a")?,
                b: pos(p[1], "b")?,
            },
            MarginFamily::Gb3 => {
                if !(p[2] > 0.0 && p[2] <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "GB3 lambda must lie in (0, 1], got {}",
                        p[2]
                    )));
                }
                Margin::Gb3 {
                    a: pos(p[0], "a")?,
                    b: pos(p[1], "b")?,
                    lambda: p[2],
                }
            }
        })
    }

    pub fn family(&self) -> MarginFamily {
        match self {
            Margin::Normal { .. } => MarginFamily::Normal,
            Margin::Beta { .. } => MarginFamily::Beta,
            Margin::Gb3 { .. } => MarginFamily::Gb3,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Margin::Normal { mu, sigma } => vec![mu, sigma],
            Margin::Beta { a, b } => vec![a, b],
            Margin::Gb3 { a, b, lambda } => vec![a, b, lambda],
        }
    }

    /// Closure of the support as (lower, upper).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Margin::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, 1.0),
        }
    }

    /// Log density; −∞ outside the open support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Margin::Normal { mu, sigma } => norm_ln_pdf((x - mu) / sigma) - sigma.ln(),
            Margin::Beta { a, b } => {
                if !(x > 0.0 && x < 1.0) {
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
            }
            Margin::Gb3 { a, b, lambda } => {
                if !(x > 0.0 && x < 1.0) {
                    return f64::NEG_INFINITY;
                }
                a * lambda.ln() + (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p()
                    - ln_beta(a, b)
                    - (a + b) * (-(1.0 - lambda) * x).ln_1p()
            }
        }
    }

    /// Density. Zero outside the support; non-finite `x` is an error.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("margin density at non-finite x = {x}")));
        }
        Ok(self.ln_pdf(x).exp())
    }

    /// Distribution function, clamped to 0 / 1 outside the support.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Margin::Normal { mu, sigma } => norm_cdf((x - mu) / sigma),
            Margin::Beta { a, b } => beta_inc(a, b, x),
            Margin::Gb3 { a, b, lambda } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    beta_inc(a, b, lambda * x / (1.0 - (1.0 - lambda) * x))
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("margin quantile needs p in (0,1), got {p}")));
        }
        Ok(match *self {
            Margin::Normal { mu, sigma } => mu + sigma * norm_quantile(p),
            Margin::Beta { a, b } => beta_inc_inv(a, b, p)?,
            Margin::Gb3 { a, b, lambda } => {
                let x = beta_inc_inv(a, b, p)?;
                x / (lambda + (1.0 - lambda) * x)
            }
        })
    }

    /// Σ log f(x_i); −∞ if any value falls outside the support.
    pub fn log_likelihood(&self, sample: &[f64]) -> f64 {
        sample.iter().map(|&x| self.ln_pdf(x)).sum()
    }
}

/// Result of a single-margin maximum likelihood fit.
#[derive(Debug, Clone)]
pub struct MarginFit {
    pub margin: Margin,
    pub loglik: f64,
    /// Standard errors from the inverse observed information of the i.i.d.
    /// likelihood; `None` for a parameter fixed on its boundary.
    pub se: Vec<Option<f64>>,
    pub aic: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn validate_sample(family: MarginFamily, sample: &[f64]) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::InsufficientData("margin fit needs at least one value".into()));
    }
    for (i, &x) in sample.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Data(format!("value {i} is not finite")));
        }
        if family != MarginFamily::Normal && !(x > 0.0 && x < 1.0) {
            return Err(Error::Data(format!(
                "value {i} = {x} is outside the open unit interval required by the {family:?} margin"
            )));
        }
    }
    Ok(())
}

fn beta_moments(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let m = sample.iter().sum::<f64>() / n;
    let v = sample.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let common = m * (1.0 - m) / v - 1.0;
    if v > 0.0 && common > 0.0 && common.is_finite() {
        (m * common, (1.0 - m) * common)
    } else {
        (1.0, 1.0)
    }
}

/// Standard errors on the natural scale: delta method applied to the inverse
/// Hessian of the negative log-likelihood in transformed coordinates.
pub(crate) fn delta_method_se<F: Fn(&[f64]) -> f64>(
    negll: &F,
    eta: &[f64],
    info: &[ParamInfo],
) -> Vec<f64> {
    let hess = optim::numerical_hessian(negll, eta, 1e-4);
    let (vcov, _) = optim::invert_information(&hess);
    (0..eta.len())
        .map(|k| {
            let d = info[k].transform.derivative(eta[k]);
            (vcov[(k, k)].max(0.0)).sqrt() * d.abs()
        })
        .collect()
}

/// Maximum likelihood fit of one margin to an i.i.d. sample.
pub fn fit_margin(family: MarginFamily, sample: &[f64]) -> Result<MarginFit> {
    validate_sample(family, sample)?;
    let n = sample.len() as f64;
    let info = family.param_info();
    match family {
        MarginFamily::Normal => {
            let mu = sample.iter().sum::<f64>() / n;
            let sigma = (sample.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
            if !(sigma > 0.0) {
                return Err(Error::NonIdentifiable("normal margin fit on a constant sample".into()));
            }
            let margin = Margin::Normal { mu, sigma };
            let loglik = margin.log_likelihood(sample);
            Ok(MarginFit {
                margin,
                loglik,
                se: vec![Some(sigma / n.sqrt()), Some(sigma / (2.0 * n).sqrt())],
                aic: aic(loglik, 2),
                iterations: 0,
                grad_norm: 0.0,
            })
        }
        MarginFamily::Beta => fit_beta(sample, &info),
        MarginFamily::Gb3 => fit_gb3(sample, &info),
    }
}

fn negll_fn<'a>(
    family: MarginFamily,
    info: &'a [ParamInfo],
    sample: &'a [f64],
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |eta: &[f64]| {
        let nat: Vec<f64> = eta
            .iter()
            .zip(info)
            .map(|(e, p)| p.transform.inverse(*e))
            .collect();
        match Margin::from_params(family, &nat) {
            Ok(m) => -m.log_likelihood(sample),
            Err(_) => f64::INFINITY,
        }
    }
}

fn non_convergence(stage: &str, r: &optim::OptimResult) -> Error {
    Error::NonConvergence {
        stage: stage.to_string(),
        iterations: r.iterations,
        grad_norm: r.grad_norm,
        last_iterate: r.x.clone(),
    }
}

fn fit_beta(sample: &[f64], info: &[ParamInfo]) -> Result<MarginFit> {
    let (a0, b0) = beta_moments(sample);
    let f = negll_fn(MarginFamily::Beta, info, sample);
    let r = optim::minimize(&f, &[a0.ln(), b0.ln()], &OptimOptions::default());
    if !r.converged() {
        return Err(non_convergence("beta margin", &r));
    }
    let se = delta_method_se(&f, &r.x, info);
    let margin = Margin::Beta {
        a: r.x[0].exp(),
        b: r.x[1].exp(),
    };
    Ok(MarginFit {
        margin,
        loglik: -r.fval,
        se: se.into_iter().map(Some).collect(),
        aic: aic(-r.fval, 2),
        iterations: r.iterations,
        grad_norm: r.grad_norm,
    })
}

/// λ above this value is treated as the Beta boundary λ = 1.
const GB3_BOUNDARY: f64 = 1.0 - 1e-6;

fn fit_gb3(sample: &[f64], info: &[ParamInfo]) -> Result<MarginFit> {
    let beta = fit_beta(sample, &MarginFamily::Beta.param_info())?;
    let f = negll_fn(MarginFamily::Gb3, info, sample);
    let mut best: Option<optim::OptimResult> = None;
    for lambda in [0.25, 0.5, 0.9] {
        let xs: Vec<f64> = sample
            .iter()
            .map(|&y| lambda * y / (1.0 - (1.0 - lambda) * y))
            .collect();
        let (a0, b0) = beta_moments(&xs);
        let r = optim::bfgs(&f, &[a0.ln(), b0.ln(), Transform::Logit.forward(lambda)], &OptimOptions::default());
        if best.as_ref().is_none_or(|b| r.fval < b.fval) {
            best = Some(r);
        }
    }
    let r = best.expect("at least one start");
    let lambda = Transform::Logit.inverse(r.x[2]);
    // The likelihood may increase towards the Beta boundary; stop there.
    if lambda > GB3_BOUNDARY || -r.fval <= beta.loglik {
        let Margin::Beta { a, b } = beta.margin else { unreachable!() };
        return Ok(MarginFit {
            margin: Margin::Gb3 { a, b, lambda: 1.0 },
            loglik: beta.loglik,
            se: vec![beta.se[0], beta.se[1], None],
            aic: aic(beta.loglik, 3),
            iterations: beta.iterations + r.iterations,
            grad_norm: beta.grad_norm,
        });
    }
    if !r.converged() {
        return Err(non_convergence("gb3 margin", &r));
    }
    let se = delta_method_se(&f, &r.x, info);
    Ok(MarginFit {
        margin: Margin::Gb3 {
            a: r.x[0].exp(),
            b: r.x[1].exp(),
            lambda,
        },
        loglik: -r.fval,
        se: se.into_iter().map(Some).collect(),
        aic: aic(-r.fval, 3),
        iterations: r.iterations,
        grad_norm: r.grad_norm,
    })
}

/// Akaike information criterion 2k − 2L.
pub fn aic(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}
