//! Prediction for a new unit of a cluster, given its x and the pairs already
//! observed in that cluster.
//!
//! With a Gaussian residual copula the normal score Z = Φ⁻¹(W) of the new
//! unit's residual rank is N(μ0, σ0²) given the history, so
//!
//! Y = G⁻¹(h⁻¹(Φ(μ0 + σ0 Z*) | F(x))),  Z* ~ N(0, 1),
//!
//! and the mean is a Gauss–Hermite sum. Other residual copulas use the
//! conditional density of the exchangeable family directly; their predictive
//! mean is a Monte Carlo estimate and is flagged as approximate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::clip;
use crate::data::Cluster;
use crate::error::{Error, Result};
use crate::exchangeable::{conditional_moments_normal, ExchangeableCopula};
use crate::model::{cluster_residual_ranks, ModelSpec};
use crate::quadrature::{integrate, normal_hermite};
use crate::roots;
use crate::special::{norm_cdf, norm_ln_pdf, norm_quantile};

/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_NODES: usize = 30;
/// Smallest accepted number of Gauss–Hermite nodes.
pub const MIN_NODES: usize = 5;
/// Monte Carlo draws for the predictive mean of non-Gaussian residual copulas.
pub const MC_DRAWS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Residual {
    /// Z ~ N(μ0, σ0²).
    Normal { mu0: f64, sigma0: f64 },
    /// Conditional exchangeable density given the stored history.
    General,
}

/// A fitted model together with one cluster's residual history.
#[derive(Debug, Clone)]
pub struct PredictionContext {
    spec: ModelSpec,
    history: Vec<f64>,
    residual: Residual,
    nodes: usize,
}

/// Predictive mean with its Monte Carlo standard error when approximate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub mc_se: Option<f64>,
}

impl PredictionContext {
    /// Context for a cluster with observed pairs `history` (possibly none).
    pub fn new(spec: &ModelSpec, history: Option<&Cluster>) -> Result<Self> {
        let w = history.map(|c| cluster_residual_ranks(spec, c)).unwrap_or_default();
        Self::from_residual_ranks(spec, w)
    }

    /// Context from residual ranks w_j = h(v_j | u_j) of the cluster's units.
    pub fn from_residual_ranks(spec: &ModelSpec, w: Vec<f64>) -> Result<Self> {
        let residual = match spec.c3 {
            ExchangeableCopula::Independence => Residual::Normal { mu0: 0.0, sigma0: 1.0 },
            ExchangeableCopula::Normal { rho } => {
                let (mu0, sigma0) = conditional_moments_normal(rho, &w);
                Residual::Normal { mu0, sigma0 }
            }
            _ if w.is_empty() => Residual::Normal { mu0: 0.0, sigma0: 1.0 },
            _ => Residual::General,
        };
        if let Residual::Normal { mu0, sigma0 } = residual {
            if !mu0.is_finite() || !(sigma0 > 0.0 && sigma0 <= 1.0) {
                return Err(Error::Domain(format!("invalid residual moments ({mu0}, {sigma0})")));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            history: w,
            residual,
            nodes: DEFAULT_NODES,
        })
    }

    /// Context with given residual moments, e.g. for population curve fans.
    pub fn from_moments(spec: &ModelSpec, mu0: f64, sigma0: f64) -> Result<Self> {
        if !mu0.is_finite() || !(sigma0 > 0.0 && sigma0 <= 1.0) {
            return Err(Error::Domain(format!("invalid residual moments ({mu0}, {sigma0})")));
        }
        Ok(Self {
            spec: spec.clone(),
            history: vec![],
            residual: Residual::Normal { mu0, sigma0 },
            nodes: DEFAULT_NODES,
        })
    }

    pub fn with_nodes(mut self, nodes: usize) -> Result<Self> {
        if nodes < MIN_NODES {
            return Err(Error::Domain(format!(
                "Gauss-Hermite prediction needs at least {MIN_NODES} nodes, got {nodes}"
            )));
        }
        self.nodes = nodes;
        Ok(self)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// (μ0, σ0) of the new unit's residual score, when Gaussian.
    pub fn moments(&self) -> Option<(f64, f64)> {
        match self.residual {
            Residual::Normal { mu0, sigma0 } => Some((mu0, sigma0)),
            Residual::General => None,
        }
    }

    /// Whether predictive means are Monte Carlo approximations.
    pub fn is_approximate(&self) -> bool {
        self.residual == Residual::General
    }

    fn u_of(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.spec.margin_x.support();
        if !(x > lo && x < hi) {
            return Err(Error::Domain(format!("x = {x} is outside the support of the X margin")));
        }
        Ok(clip(self.spec.margin_x.cdf(x)))
    }

    /// y for residual rank t at u.
    fn y_of(&self, t: f64, u: f64) -> Result<f64> {
        let v = clip(self.spec.c2.h_inverse(clip(t), u)?);
        self.spec.margin_y.quantile(v)
    }

    fn residual_ln_density(&self, w: f64) -> Result<f64> {
        match self.residual {
            Residual::Normal { mu0, sigma0 } => {
                let z = norm_quantile(w);
                Ok(norm_ln_pdf((z - mu0) / sigma0) - sigma0.ln() - norm_ln_pdf(z))
            }
            Residual::General => self.spec.c3.conditional_ln_density(&self.history, w),
        }
    }

    fn residual_cdf(&self, t: f64) -> f64 {
        match self.residual {
            Residual::Normal { mu0, sigma0 } => norm_cdf((norm_quantile(t) - mu0) / sigma0),
            Residual::General => integrate(
                |w| self.residual_ln_density(clip(w)).map(f64::exp).unwrap_or(0.0),
                0.0,
                t,
                1e-12,
            )
            .clamp(0.0, 1.0),
        }
    }

    fn residual_quantile(&self, p: f64) -> Result<f64> {
        match self.residual {
            Residual::Normal { mu0, sigma0 } => Ok(norm_cdf(mu0 + sigma0 * norm_quantile(p))),
            Residual::General => roots::bisect(|t| self.residual_cdf(t) - p, 0.0, 1.0, 1e-13),
        }
    }

    /// Predictive mean with its Monte Carlo standard error when approximate.
    pub fn predictive_mean_estimate(&self, x_new: f64) -> Result<MeanEstimate> {
        let u = self.u_of(x_new)?;
        match self.residual {
            Residual::Normal { mu0, sigma0 } => {
                let rule = normal_hermite(self.nodes);
                let mut mean = 0.0;
                for (&z, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    mean += wt * self.y_of(norm_cdf(mu0 + sigma0 * z), u)?;
                }
                Ok(MeanEstimate { mean, mc_se: None })
            }
            Residual::General => {
                // Uniform proposals weighted by the conditional residual density.
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let vals: Vec<f64> = (0..MC_DRAWS)
                    .map(|_| {
                        let w: f64 = clip(rng.random());
                        Ok(self.y_of(w, u)? * self.residual_ln_density(w)?.exp())
                    })
                    .collect::<Result<_>>()?;
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                Ok(MeanEstimate {
                    mean,
                    mc_se: Some((var / n).sqrt()),
                })
            }
        }
    }

    pub fn predictive_mean(&self, x_new: f64) -> Result<f64> {
        Ok(self.predictive_mean_estimate(x_new)?.mean)
    }

    /// Predictive density g(y) · c2(F(x), G(y)) · c_res(h(G(y) | F(x))),
    /// zero outside the support of the Y margin.
    pub fn predictive_density(&self, x_new: f64, y: f64) -> Result<f64> {
        let u = self.u_of(x_new)?;
        let (lo, hi) = self.spec.margin_y.support();
        if !y.is_finite() {
            return Err(Error::Domain(format!("y = {y} is not finite")));
        }
        if y < lo || y > hi {
            return Ok(0.0);
        }
        if y == lo || y == hi {
            return Err(Error::Boundary(format!("y = {y} is on the boundary of the Y support")));
        }
        let v = clip(self.spec.margin_y.cdf(y));
        let w = clip(self.spec.c2.d1(u, v));
        let ln = self.spec.margin_y.ln_pdf(y) + self.spec.c2.ln_density(u, v) + self.residual_ln_density(w)?;
        Ok(ln.exp())
    }

    /// P(Y ≤ y) for the new unit.
    pub fn predictive_cdf(&self, x_new: f64, y: f64) -> Result<f64> {
        let u = self.u_of(x_new)?;
        let (lo, hi) = self.spec.margin_y.support();
        if y <= lo {
            return Ok(0.0);
        }
        if y >= hi {
            return Ok(1.0);
        }
        let v = clip(self.spec.margin_y.cdf(y));
        Ok(self.residual_cdf(clip(self.spec.c2.d1(u, v))))
    }

    /// G⁻¹(h⁻¹(F_W⁻¹(p) | F(x))), where F_W is the residual rank law.
    pub fn predictive_quantile(&self, x_new: f64, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("probability {p} must lie in (0, 1)")));
        }
        let u = self.u_of(x_new)?;
        self.y_of(self.residual_quantile(p)?, u)
    }

    /// Equal-tailed interval with coverage `level`.
    pub fn prediction_interval(&self, x_new: f64, level: f64) -> Result<(f64, f64)> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!("coverage {level} must lie in (0, 1)")));
        }
        let a = 0.5 * (1.0 - level);
        Ok((self.predictive_quantile(x_new, a)?, self.predictive_quantile(x_new, 1.0 - a)?))
    }
}

/// Predictive mean and quantiles at one x.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub mean: f64,
    pub quantiles: Vec<f64>,
}

/// Predictive curve over `x_grid` with the given quantile levels.
pub fn prediction_curve(ctx: &PredictionContext, x_grid: &[f64], levels: &[f64]) -> Result<Vec<CurvePoint>> {
    x_grid
        .par_iter()
        .map(|&x| {
            Ok(CurvePoint {
                x,
                mean: ctx.predictive_mean(x)?,
                quantiles: levels
                    .iter()
                    .map(|&p| ctx.predictive_quantile(x, p))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Population fan: predictive mean curves for clusters whose residual effect
/// sits at the `probs` quantiles of its between-cluster law. For large
/// clusters μ0 ≈ mean of Φ⁻¹(W_j) ~ N(0, ρ3) and σ0² ≈ 1 − ρ3.
/// Requires a Gaussian (or independence) residual copula.
pub fn population_fan(spec: &ModelSpec, x_grid: &[f64], probs: &[f64]) -> Result<Vec<(f64, Vec<CurvePoint>)>> {
    let rho = match spec.c3 {
        ExchangeableCopula::Normal { rho } => rho,
        ExchangeableCopula::Independence => 0.0,
        _ => {
            return Err(Error::Unsupported(
                "population fans need a Gaussian residual copula".into(),
            ))
        }
    };
    probs
        .iter()
        .map(|&q| {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Domain(format!("probability {q} must lie in (0, 1)")));
            }
            let ctx = PredictionContext::from_moments(spec, rho.sqrt() * norm_quantile(q), (1.0 - rho).sqrt())?;
            Ok((q, prediction_curve(&ctx, x_grid, &[])?))
        })
        .collect()
}

/// Column name of a quantile level: 0.025 → `q025`, 0.5 → `q500`.
pub fn quantile_column(p: f64) -> String {
    format!("q{:03}", (p * 1000.0).round() as i64)
}

/// Writes `x,mean,q…` rows.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], levels: &[f64], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["x".to_string(), "mean".to_string()];
    header.extend(levels.iter().map(|&p| quantile_column(p)));
    wtr.write_record(&header)?;
    for pt in points {
        let mut row = vec![pt.x.to_string(), pt.mean.to_string()];
        row.extend(pt.quantiles.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `y,density` rows of the predictive density at `x_new`.
pub fn write_density_csv<W: Write>(ctx: &PredictionContext, x_new: f64, y_grid: &[f64], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["y", "density"])?;
    for &y in y_grid {
        wtr.write_record([y.to_string(), ctx.predictive_density(x_new, y)?.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bivariate::BivariateCopula;
    use crate::margins::Margin;
    use crate::model::simulate;

    fn all_normal() -> ModelSpec {
        ModelSpec {
            margin_x: Margin::normal(0.4, 1.3).unwrap(),
            margin_y: Margin::normal(-0.2, 0.8).unwrap(),
            c1: ExchangeableCopula::Normal { rho: 0.31 },
            c2: BivariateCopula::Normal { rho: 0.59 },
            c3: ExchangeableCopula::Normal { rho: 0.156 },
        }
    }

    fn school() -> ModelSpec {
        ModelSpec {
            margin_x: Margin::beta(4.271, 2.359).unwrap(),
            margin_y: Margin::gb3(2.457, 2.470, 0.248).unwrap(),
            c1: ExchangeableCopula::Normal { rho: 0.063 },
            c2: BivariateCopula::survival(
                BivariateCopula::khoudraji(BivariateCopula::Normal { rho: 0.795 }, 0.822, 0.959).unwrap(),
            ),
            c3: ExchangeableCopula::Normal { rho: 0.161 },
        }
    }

    fn history(spec: &ModelSpec, n: usize, seed: u64) -> Cluster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        simulate(spec, &[n], &mut rng).unwrap().clusters.remove(0)
    }

    #[test]
    fn normal_mean_is_affine_closed_form() {
        let s = all_normal();
        let (m1, s1, m2, s2, r2) = (0.4, 1.3, -0.2, 0.8, 0.59);
        let b1 = r2 * s2 / s1;
        let b0 = m2 - b1 * m1;
        for mu0 in [-1.0, -0.464, 0.0, 0.81, 1.5] {
            let ctx = PredictionContext::from_moments(&s, mu0, 0.9).unwrap();
            for k in 0..50 {
                let x = -3.0 + 6.0 * k as f64 / 49.0;
                let want = b0 + b1 * x + s2 * (1.0 - r2 * r2).sqrt() * mu0;
                assert!((ctx.predictive_mean(x).unwrap() - want).abs() < 1e-8);
            }
        }
        let ctx = PredictionContext::from_moments(&s, 0.0, 1.0).unwrap();
        assert!((ctx.predictive_quantile(0.7, 0.5).unwrap() - (b0 + b1 * 0.7)).abs() < 1e-9);
        assert!(PredictionContext::from_moments(&s, 0.0, 1.0).unwrap().with_nodes(4).is_err());
    }

    #[test]
    fn empty_history_is_marginal_copula_regression() {
        let s = school();
        let ctx = PredictionContext::new(&s, None).unwrap();
        assert_eq!(ctx.moments(), Some((0.0, 1.0)));
        let x = 0.55;
        let u = s.margin_x.cdf(x);
        // E[Y | X = x] = ∫ y g(y) c2(F(x), G(y)) dy.
        let want = integrate(
            |y| y * (s.margin_y.ln_pdf(y) + s.c2.ln_density(u, s.margin_y.cdf(y))).exp(),
            0.0,
            1.0,
            1e-12,
        );
        let got = ctx.predictive_mean(x).unwrap();
        assert!((got - want).abs() < 1e-7, "{got} vs {want}");
        for y in [0.1, 0.4, 0.8] {
            let plain = (s.margin_y.ln_pdf(y) + s.c2.ln_density(u, s.margin_y.cdf(y))).exp();
            assert!((ctx.predictive_density(x, y).unwrap() - plain).abs() <= 1e-12 * plain);
        }
    }

    #[test]
    fn density_matches_exchangeable_ratio_and_normalizes() {
        let s = school();
        let hist = history(&s, 12, 2);
        let ctx = PredictionContext::new(&s, Some(&hist)).unwrap();
        let w_prev = cluster_residual_ranks(&s, &hist);
        for q in [0.1, 0.5, 0.9] {
            let x = s.margin_x.quantile(q).unwrap();
            let u = s.margin_x.cdf(x);
            for y in [0.05, 0.3, 0.5, 0.77, 0.97] {
                let v = s.margin_y.cdf(y);
                let mut all = w_prev.clone();
                all.push(s.c2.d1(u, v));
                let ratio = (s.margin_y.ln_pdf(y) + s.c2.ln_density(u, v) + s.c3.ln_density(&all).unwrap()
                    - s.c3.ln_density(&w_prev).unwrap())
                .exp();
                let got = ctx.predictive_density(x, y).unwrap();
                assert!((got - ratio).abs() <= 1e-10 * ratio, "{got} vs {ratio}");
            }
            let total = integrate(|y| ctx.predictive_density(x, y).unwrap_or(0.0), 0.0, 1.0, 1e-12);
            assert!((total - 1.0).abs() < 1e-6, "{total}");
            let mean = integrate(|y| y * ctx.predictive_density(x, y).unwrap_or(0.0), 0.0, 1.0, 1e-12);
            assert!((mean - ctx.predictive_mean(x).unwrap()).abs() < 1e-5);
        }
        assert!(ctx.predictive_density(0.5, 0.0).is_err());
        assert_eq!(ctx.predictive_density(0.5, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn quantiles_invert_the_integrated_density() {
        let s = school();
        let ctx = PredictionContext::new(&s, Some(&history(&s, 19, 3))).unwrap();
        let x = 0.4;
        for p in [0.025, 0.1, 0.5, 0.9, 0.975] {
            let q = ctx.predictive_quantile(x, p).unwrap();
            let mass = integrate(|y| ctx.predictive_density(x, y).unwrap_or(0.0), 0.0, q, 1e-12);
            assert!((mass - p).abs() < 1e-6, "p={p}: {mass}");
        }
        let (lo, hi) = ctx.prediction_interval(x, 0.95).unwrap();
        assert!(lo < hi);
        assert!(ctx.predictive_quantile(x, 1.0).is_err());
    }

    #[test]
    fn hermite_rule_has_converged() {
        let s = all_normal();
        let base = PredictionContext::new(&s, Some(&history(&s, 10, 4))).unwrap();
        let fine = base.clone().with_nodes(60).unwrap();
        for x in [-2.0, 0.0, 2.0] {
            assert!((base.predictive_mean(x).unwrap() - fine.predictive_mean(x).unwrap()).abs() <= 1e-7);
        }
        // The κ2 ≈ 0.96 Khoudraji factor makes y(z) nearly step-shaped away
        // from the centre of X, where 30 nodes only reach ~1e-5.
        let s = school();
        let base = PredictionContext::new(&s, Some(&history(&s, 10, 4))).unwrap();
        let fine = base.clone().with_nodes(60).unwrap();
        for (q, tol) in [(0.1, 1e-5), (0.5, 1e-7), (0.9, 1e-5)] {
            let x = s.margin_x.quantile(q).unwrap();
            let (a, b) = (base.predictive_mean(x).unwrap(), fine.predictive_mean(x).unwrap());
            assert!((a - b).abs() <= tol, "q={q}: {a} vs {b}");
        }
    }

    #[test]
    fn history_order_and_monotonicity() {
        let s = school();
        let mut hist = history(&s, 9, 5);
        let a = PredictionContext::new(&s, Some(&hist)).unwrap();
        hist.x.reverse();
        hist.y.reverse();
        let b = PredictionContext::new(&s, Some(&hist)).unwrap();
        assert!((a.predictive_mean(0.5).unwrap() - b.predictive_mean(0.5).unwrap()).abs() < 1e-13);
        let qs: Vec<f64> = [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&p| a.predictive_quantile(0.5, p).unwrap()).collect();
        assert!(qs.windows(2).all(|w| w[0] < w[1]));
        let low = PredictionContext::from_moments(&s, -0.464, 0.9).unwrap();
        let high = PredictionContext::from_moments(&s, 0.81, 0.9).unwrap();
        for x in [0.2, 0.5, 0.8] {
            assert!(low.predictive_quantile(x, 0.5).unwrap() < high.predictive_quantile(x, 0.5).unwrap());
        }
    }

    #[test]
    fn non_gaussian_residuals_use_monte_carlo() {
        let mut s = school();
        s.c3 = ExchangeableCopula::Clayton { delta: 0.6 };
        let ctx = PredictionContext::new(&s, Some(&history(&s, 8, 6))).unwrap();
        assert!(ctx.is_approximate() && ctx.moments().is_none());
        let x = 0.6;
        let est = ctx.predictive_mean_estimate(x).unwrap();
        let want = integrate(|y| y * ctx.predictive_density(x, y).unwrap_or(0.0), 0.0, 1.0, 1e-10);
        assert!((est.mean - want).abs() < 4.0 * est.mc_se.unwrap(), "{est:?} vs {want}");
        let q = ctx.predictive_quantile(x, 0.3).unwrap();
        let mass = integrate(|y| ctx.predictive_density(x, y).unwrap_or(0.0), 0.0, q, 1e-10);
        assert!((mass - 0.3).abs() < 1e-6);
    }

    #[test]
    fn csv_output() {
        let s = all_normal();
        let ctx = PredictionContext::new(&s, None).unwrap();
        let levels = [0.025, 0.5, 0.975];
        let pts = prediction_curve(&ctx, &[-1.0, 0.0, 1.0], &levels).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&pts, &levels, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,mean,q025,q500,q975\n"));
        assert_eq!(text.lines().count(), 4);
        let fan = population_fan(&s, &[0.0, 1.0], &[0.1, 0.5, 0.9]).unwrap();
        assert!(fan[0].1[0].mean < fan[1].1[0].mean && fan[1].1[0].mean < fan[2].1[0].mean);
    }
}
