//! Estimators: stagewise inference functions for margins (IFM) and full
//! maximum likelihood, with standard errors, likelihood ratio tests and a
//! cluster bootstrap.
//!
//! IFM stages run in the order marginX, marginY, c2, c1, c3. Each copula
//! stage maximizes its own pseudo log-likelihood on ranks computed from the
//! upstream estimates; its standard errors ignore the clustering.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bivariate::BivariateFamily;
use crate::data::HierarchicalDataset;
use crate::diagnostics::{exchangeable_kendall_tau, pooled_kendall_tau};
use crate::error::{Error, Result};
use crate::exchangeable::ExchangeableFamily;
use crate::margins::{delta_method_se, fit_margin, MarginFamily};
use crate::model::{full_log_likelihood, margin_ranks, residual_ranks, LogLikTerms, ModelFamilies, ModelSpec};
use crate::optim::{self, OptimOptions, Status};
use crate::transform::{ParamInfo, Transform};

pub use crate::margins::aic;

/// Relative step of the central-difference Hessian used for standard errors.
pub const HESSIAN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ifm,
    Mle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub status: Status,
    /// Whether the observed information was positive definite; otherwise the
    /// covariance is a pseudo-inverse.
    pub hessian_pd: bool,
}

/// Estimates of θ with standard errors and the full log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema: u32,
    pub method: Method,
    pub spec: ModelSpec,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// `None` for a parameter fixed on its boundary.
    pub se: Vec<Option<f64>>,
    /// Covariance of the natural parameters. For IFM it is diagonal, built
    /// from the stagewise pseudo standard errors.
    pub vcov: Vec<Vec<f64>>,
    pub loglik: f64,
    pub terms: LogLikTerms,
    pub n_params: usize,
    pub aic: f64,
    pub convergence: Convergence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FittedModel {
    pub fn families(&self) -> ModelFamilies {
        self.spec.families()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FittedModel = serde_json::from_str(s)?;
        if f.schema != crate::model::SCHEMA_VERSION {
            return Err(Error::Data(format!("unsupported fit schema {}", f.schema)));
        }
        Ok(f)
    }
}

/// One IFM stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub stage: String,
    pub family: String,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<Option<f64>>,
    /// Stage pseudo log-likelihood (L_F, L_G, L_2, L_1 or L_3).
    pub loglik: f64,
    pub aic: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfmTrace {
    /// In execution order: marginX, marginY, c2, c1, c3.
    pub stages: Vec<StageFit>,
}

impl IfmTrace {
    pub fn stage(&self, name: &str) -> Option<&StageFit> {
        self.stages.iter().find(|s| s.stage == name)
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

fn to_eta(info: &[ParamInfo], theta: &[f64]) -> Vec<f64> {
    theta.iter().zip(info).map(|(t, p)| p.transform.forward(*t)).collect()
}

fn from_eta(info: &[ParamInfo], eta: &[f64]) -> Vec<f64> {
    eta.iter().zip(info).map(|(e, p)| p.transform.inverse(*e)).collect()
}

/// Maximizes a copula-stage pseudo log-likelihood over several natural-scale
/// starting points.
fn fit_copula_stage<F>(
    stage: &'static str,
    family: String,
    info: Vec<ParamInfo>,
    starts: Vec<Vec<f64>>,
    loglik: F,
) -> Result<StageFit>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let names: Vec<String> = info.iter().map(|p| p.name.clone()).collect();
    if info.is_empty() {
        let l = loglik(&[]).ok_or(Error::NonFinite { cluster: 0, unit: None }).map_err(|e| e.in_stage(stage))?;
        return Ok(StageFit {
            stage: stage.into(),
            family,
            names,
            estimates: vec![],
            se: vec![],
            loglik: l,
            aic: 0.0,
            iterations: 0,
            grad_norm: 0.0,
        });
    }
    let negll = |eta: &[f64]| match loglik(&from_eta(&info, eta)) {
        Some(l) if l.is_finite() => -l,
        _ => f64::INFINITY,
    };
    let opts = OptimOptions::default();
    let mut best: Option<optim::OptimResult> = None;
    for start in starts {
        let r = optim::minimize(&negll, &to_eta(&info, &start), &opts);
        if best.as_ref().is_none_or(|b| r.fval < b.fval) {
            best = Some(r);
        }
    }
    let r = best.expect("at least one start");
    if !r.converged() || !r.fval.is_finite() {
        return Err(non_convergence(stage, &r).in_stage(stage));
    }
    let se = delta_method_se(&negll, &r.x, &info);
    Ok(StageFit {
        stage: stage.into(),
        family,
        names,
        estimates: from_eta(&info, &r.x),
        se: se.into_iter().map(Some).collect(),
        loglik: -r.fval,
        aic: aic(-r.fval, info.len()),
        iterations: r.iterations,
        grad_norm: r.grad_norm,
    })
}

/// Starting points for the link copula: the member matching the pooled tau,
/// plus variants with other Khoudraji exponents.
fn c2_starts(family: &BivariateFamily, tau: f64) -> Vec<Vec<f64>> {
    let base = family.initial(tau).params_for(family);
    let info = family.param_info();
    let mut starts = vec![base.clone()];
    if info.iter().any(|p| p.name.starts_with("kappa")) {
        for k in [0.5, 0.95] {
            let mut s = base.clone();
            for (v, p) in s.iter_mut().zip(&info) {
                if p.name.starts_with("kappa") {
                    *v = k;
                }
            }
            starts.push(s);
        }
    }
    starts
}

fn exchangeable_stage(
    stage: &'static str,
    family: ExchangeableFamily,
    clusters: &[Vec<f64>],
) -> Result<StageFit> {
    if family.n_params() > 0 && !clusters.iter().any(|c| c.len() >= 2) {
        return Err(Error::NonIdentifiable(format!(
            "{stage} needs at least one cluster with two or more units"
        ))
        .in_stage(stage));
    }
    let tau = exchangeable_kendall_tau(clusters).map(|t| t.tau).unwrap_or(0.1);
    let mut starts = vec![family.initial(tau).params()];
    if family.n_params() > 0 {
        starts.push(family.initial(0.3).params());
    }
    fit_copula_stage(stage, format!("{family:?}").to_lowercase(), family.param_info(), starts, |p| {
        let c = family.build(p).ok()?;
        let mut total = 0.0;
        for w in clusters {
            total += c.ln_density(w).ok()?;
        }
        Some(total)
    })
}

fn check_data(data: &HierarchicalDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InsufficientData("dataset has no clusters".into()));
    }
    Ok(())
}

/// Stagewise IFM estimation.
pub fn fit_ifm(families: &ModelFamilies, data: &HierarchicalDataset) -> Result<(FittedModel, IfmTrace)> {
    check_data(data)?;
    let mut stages = Vec::with_capacity(5);
    let mut margin_stage = |stage: &'static str, family: MarginFamily, values: Vec<f64>| -> Result<_> {
        let fit = fit_margin(family, &values).map_err(|e| e.in_stage(stage))?;
        stages.push(StageFit {
            stage: stage.into(),
            family: format!("{family:?}").to_lowercase(),
            names: family.param_info().into_iter().map(|p| p.name).collect(),
            estimates: fit.margin.params(),
            se: fit.se.clone(),
            loglik: fit.loglik,
            aic: fit.aic,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        });
        Ok(fit.margin)
    };
    let mx = margin_stage("marginX", families.margin_x, data.all_x())?;
    let my = margin_stage("marginY", families.margin_y, data.all_y())?;

    let u: Vec<Vec<f64>> = data.clusters.iter().map(|c| margin_ranks(&mx, &c.x)).collect();
    let v: Vec<Vec<f64>> = data.clusters.iter().map(|c| margin_ranks(&my, &c.y)).collect();
    let (pu, pv): (Vec<f64>, Vec<f64>) = (u.concat(), v.concat());

    let f2 = &families.c2;
    let tau2 = pooled_kendall_tau(&pu, &pv).map(|t| t.tau).unwrap_or(0.3);
    let s2 = fit_copula_stage("c2", f2.name(), f2.param_info(), c2_starts(f2, tau2), |p| {
        let c = f2.build(p).ok()?;
        Some(pu.iter().zip(&pv).map(|(&a, &b)| c.ln_density(a, b)).sum())
    })?;
    let c2 = f2.build(&s2.estimates).map_err(|e| e.in_stage("c2"))?;
    stages.push(s2);

    let s1 = exchangeable_stage("c1", families.c1, &u)?;
    let c1 = families.c1.build(&s1.estimates)?;
    stages.push(s1);

    let w: Vec<Vec<f64>> = u.iter().zip(&v).map(|(u, v)| residual_ranks(&c2, u, v)).collect();
    let s3 = exchangeable_stage("c3", families.c3, &w)?;
    let c3 = families.c3.build(&s3.estimates)?;
    stages.push(s3);

    let spec = ModelSpec {
        margin_x: mx,
        margin_y: my,
        c1,
        c2,
        c3,
    };
    // Stages are stored in execution order; parameters are packed as
    // (marginX | marginY | c1 | c2 | c3).
    let order = ["marginX", "marginY", "c1", "c2", "c3"];
    let se: Vec<Option<f64>> = order
        .iter()
        .flat_map(|n| stages.iter().find(|s| s.stage == *n).expect("stage").se.clone())
        .collect();
    let terms = full_log_likelihood(&spec, data)?;
    let k = families.n_params();
    let mut vcov = vec![vec![0.0; k]; k];
    for (i, s) in se.iter().enumerate() {
        vcov[i][i] = s.map_or(0.0, |s| s * s);
    }
    let iterations = stages.iter().map(|s| s.iterations).sum();
    let grad_norm = stages.iter().map(|s| s.grad_norm).fold(0.0, f64::max);
    let fit = FittedModel {
        schema: crate::model::SCHEMA_VERSION,
        method: Method::Ifm,
        names: families.param_info().into_iter().map(|p| p.name).collect(),
        estimates: spec.params(),
        spec,
        se,
        vcov,
        loglik: terms.total(),
        terms,
        n_params: k,
        aic: aic(terms.total(), k),
        convergence: Convergence {
            iterations,
            evaluations: 0,
            grad_norm,
            status: Status::Converged,
            hessian_pd: true,
        },
        seed: None,
    };
    Ok((fit, IfmTrace { stages }))
}

/// Natural parameters moved off the boundary so that every transform is finite.
fn interior_start(info: &[ParamInfo], theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(info)
        .map(|(&t, p)| match p.transform {
            Transform::Logit => t.clamp(1e-4, 1.0 - 1e-4),
            Transform::Fisher => t.clamp(-1.0 + 1e-6, 1.0 - 1e-6),
            Transform::Log => t.max(1e-8),
            Transform::LogShifted => t.max(1.0 + 1e-8),
            Transform::Identity => t,
        })
        .collect()
}

/// Negative full log-likelihood in unconstrained coordinates.
pub fn negative_log_likelihood<'a>(
    families: &'a ModelFamilies,
    data: &'a HierarchicalDataset,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |eta: &[f64]| {
        let spec = match families.build(&families.from_eta(eta)) {
            Ok(s) => s,
            Err(_) => return f64::INFINITY,
        };
        match full_log_likelihood(&spec, data) {
            Ok(t) if t.total().is_finite() => -t.total(),
            _ => f64::INFINITY,
        }
    }
}

/// Full maximum likelihood by BFGS in unconstrained coordinates, started at
/// `init` or at the IFM estimate. Standard errors come from the inverse
/// central-difference Hessian, mapped to natural parameters by the delta
/// method.
pub fn fit_mle(families: &ModelFamilies, data: &HierarchicalDataset, init: Option<&ModelSpec>) -> Result<FittedModel> {
    check_data(data)?;
    let start = match init {
        Some(s) => {
            if &s.families() != families {
                return Err(Error::InvalidParameter("initial model has different families".into()));
            }
            s.clone()
        }
        None => fit_ifm(families, data)?.0.spec,
    };
    if (families.c1.n_params() > 0 || families.c3.n_params() > 0) && !data.clusters.iter().any(|c| c.len() >= 2) {
        return Err(Error::NonIdentifiable(
            "exchangeable parameters need at least one cluster with two or more units".into(),
        )
        .in_stage("mle"));
    }
    let info = families.param_info();
    let eta0 = to_eta(&info, &interior_start(&info, &start.params()));
    let negll = negative_log_likelihood(families, data);
    let r = optim::bfgs(&negll, &eta0, &OptimOptions::default());
    if !r.converged() || !r.fval.is_finite() {
        return Err(non_convergence("mle", &r));
    }
    let theta = from_eta(&info, &r.x);
    let spec = families.build(&theta)?;
    let terms = full_log_likelihood(&spec, data)?;

    let hess = optim::numerical_hessian(&negll, &r.x, HESSIAN_STEP);
    let (cov_eta, pd) = optim::invert_information(&hess);
    let k = theta.len();
    let jac: Vec<f64> = r.x.iter().zip(&info).map(|(e, p)| p.transform.derivative(*e)).collect();
    let vcov = DMatrix::from_fn(k, k, |i, j| (jac[i] * jac[j]) * (0.5 * (cov_eta[(i, j)] + cov_eta[(j, i)])));
    let se = (0..k).map(|i| Some(vcov[(i, i)].max(0.0).sqrt())).collect();
    Ok(FittedModel {
        schema: crate::model::SCHEMA_VERSION,
        method: Method::Mle,
        names: info.into_iter().map(|p| p.name).collect(),
        estimates: theta,
        spec,
        se,
        vcov: (0..k).map(|i| (0..k).map(|j| vcov[(i, j)]).collect()).collect(),
        loglik: terms.total(),
        terms,
        n_params: k,
        aic: aic(terms.total(), k),
        convergence: Convergence {
            iterations: r.iterations,
            evaluations: r.evaluations,
            grad_norm: r.grad_norm,
            status: r.status,
            hessian_pd: pd,
        },
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Upper tail of the χ² distribution with `df` degrees of freedom.
pub fn chi2_p_value(chi2: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive df");
    dist.sf(chi2.max(0.0))
}

fn bivariate_nested(full: &BivariateFamily, nested: &BivariateFamily) -> bool {
    use BivariateFamily as B;
    if full == nested || *nested == B::Independence {
        return true;
    }
    match (full, nested) {
        (B::Survival { base: a }, B::Survival { base: b }) => bivariate_nested(a, b),
        (B::Khoudraji { base: a, shapes: sa }, B::Khoudraji { base: b, shapes: sb }) => {
            a == b && (sa == sb || *sb == crate::bivariate::KhoudrajiShapes::U)
        }
        (B::Khoudraji { base, .. }, other) => **base == *other,
        _ => false,
    }
}

fn exchangeable_nested(full: ExchangeableFamily, nested: ExchangeableFamily) -> bool {
    full == nested || nested == ExchangeableFamily::Independence
}

/// Likelihood ratio test of `nested` within `full`.
///
/// `nested` must restrict `full` component by component: identical margins,
/// exchangeable families equal or independence, and a link family equal to,
/// independence, a κ2 = 1 Khoudraji restriction, or the Khoudraji base.
pub fn likelihood_ratio_test(full: &FittedModel, nested: &FittedModel) -> Result<LrtResult> {
    let (f, n) = (full.families(), nested.families());
    let ok = f.margin_x == n.margin_x
        && f.margin_y == n.margin_y
        && exchangeable_nested(f.c1, n.c1)
        && exchangeable_nested(f.c3, n.c3)
        && bivariate_nested(&f.c2, &n.c2);
    if !ok || n.n_params() > f.n_params() {
        return Err(Error::InvalidParameter(format!(
            "model with link '{}' is not nested in model with link '{}'",
            n.c2.name(),
            f.c2.name()
        )));
    }
    let df = f.n_params() - n.n_params();
    let chi2 = if df == 0 { 0.0 } else { (2.0 * (full.loglik - nested.loglik)).max(0.0) };
    Ok(LrtResult {
        chi2,
        df,
        p_value: chi2_p_value(chi2, df),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub names: Vec<String>,
    /// Standard deviation of each natural parameter over successful refits.
    pub se: Vec<f64>,
    pub replicates: usize,
    pub failures: usize,
}

/// Minimum number of bootstrap replicates.
pub const MIN_BOOTSTRAP: usize = 50;

/// Cluster bootstrap: resamples m clusters with replacement, refits with
/// `fit`, and reports the standard deviation of the estimates. Replicate r
/// uses random stream r of `seed`. More than 20% failed refits is an error.
pub fn cluster_bootstrap_se<F>(fit: F, data: &HierarchicalDataset, b: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&HierarchicalDataset) -> Result<FittedModel> + Sync,
{
    if b < MIN_BOOTSTRAP {
        return Err(Error::InsufficientData(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {b}"
        )));
    }
    check_data(data)?;
    let m = data.len();
    let results: Vec<Option<(Vec<String>, Vec<f64>)>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = crate::substream_rng(seed, r as u64);
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            fit(&data.select(&idx)).ok().map(|f| (f.names, f.estimates))
        })
        .collect();
    let ok: Vec<&(Vec<String>, Vec<f64>)> = results.iter().flatten().collect();
    let failures = b - ok.len();
    if failures * 5 > b || ok.len() < 2 {
        return Err(Error::BootstrapFailures { failures, total: b });
    }
    let k = ok[0].1.len();
    let n = ok.len() as f64;
    let se = (0..k)
        .map(|j| {
            let mean = ok.iter().map(|e| e.1[j]).sum::<f64>() / n;
            (ok.iter().map(|e| (e.1[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapResult {
        names: ok[0].0.clone(),
        se,
        replicates: b,
        failures,
    })
}
