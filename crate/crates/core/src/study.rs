//! Monte Carlo study of the IFM and maximum likelihood estimators, and a
//! synthetic stand-in for a school marks study.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bivariate::{BivariateCopula, BivariateFamily, KhoudrajiShapes};
use crate::data::HierarchicalDataset;
use crate::error::{Error, Result};
use crate::estimation::{fit_ifm, fit_mle};
use crate::exchangeable::{ExchangeableCopula, ExchangeableFamily};
use crate::margins::{Margin, MarginFamily};
use crate::model::{simulate, ModelFamilies, ModelSpec, SCHEMA_VERSION};
use crate::special::{expit, logit};
use crate::substream_rng;

/// Default number of replicates.
pub const DEFAULT_REPLICATES: usize = 200;
/// Reports with a larger share of failed replicates are flagged.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Kendall's tau of the exchangeable X copula and of the residual copula.
pub const TAU1: f64 = 0.2;
pub const TAU3: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum C2Scenario {
    Normal,
    Clayton,
    /// u^{1−κ} C_ρ(u^κ, v) with a normal C_ρ.
    KhoudrajiNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Design {
    /// Equal cluster sizes.
    Eq,
    /// Two groups of unequal cluster sizes.
    Neq,
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub c2: C2Scenario,
    pub tau2: f64,
    pub m: usize,
    pub design: Design,
    #[serde(default = "default_replicates")]
    pub b: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(c2: C2Scenario, tau2: f64, m: usize, design: Design, b: usize, seed: u64) -> Result<Self> {
        let c = Self {
            schema: SCHEMA_VERSION,
            c2,
            tau2,
            m,
            design,
            b,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Data(format!("unsupported scenario schema {}", self.schema)));
        }
        if self.m != 10 && self.m != 50 {
            return Err(Error::InvalidParameter(format!("m must be 10 or 50, got {}", self.m)));
        }
        if self.b < 2 {
            return Err(Error::InvalidParameter("at least two replicates are needed".into()));
        }
        match self.c2 {
            C2Scenario::KhoudrajiNormal if self.tau2 != 0.4 && self.tau2 != 0.6 => Err(Error::InvalidParameter(
                format!("the Khoudraji scenario is defined for tau2 = 0.4 or 0.6, got {}", self.tau2),
            )),
            _ if !(self.tau2 > 0.0 && self.tau2 < 1.0) => {
                Err(Error::InvalidParameter(format!("tau2 must lie in (0, 1), got {}", self.tau2)))
            }
            _ => Ok(()),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        match (self.design, self.m) {
            (Design::Eq, 10) => vec![30; 10],
            (Design::Eq, _) => vec![18; 50],
            (Design::Neq, 10) => [vec![15; 4], vec![40; 6]].concat(),
            (Design::Neq, _) => [vec![10; 30], vec![30; 20]].concat(),
        }
    }

    pub fn families(&self) -> ModelFamilies {
        ModelFamilies {
            margin_x: MarginFamily::Normal,
            margin_y: MarginFamily::Normal,
            c1: ExchangeableFamily::Normal,
            c2: match self.c2 {
                C2Scenario::Normal => BivariateFamily::Normal,
                C2Scenario::Clayton => BivariateFamily::Clayton,
                C2Scenario::KhoudrajiNormal => BivariateFamily::khoudraji(BivariateFamily::Normal, KhoudrajiShapes::U),
            },
            c3: ExchangeableFamily::Normal,
        }
    }

    /// Data-generating model: standard normal margins, normal exchangeable
    /// copulas with Kendall's tau 0.2 and 0.1, and C2 at Kendall's tau τ2.
    pub fn true_spec(&self) -> Result<ModelSpec> {
        let rho_of = |tau: f64| (std::f64::consts::FRAC_PI_2 * tau).sin();
        let c2 = match self.c2 {
            C2Scenario::Normal => BivariateCopula::Normal { rho: rho_of(self.tau2) },
            C2Scenario::Clayton => BivariateCopula::Clayton {
                delta: 2.0 * self.tau2 / (1.0 - self.tau2),
            },
            C2Scenario::KhoudrajiNormal => {
                let (eta_rho, eta_kappa) = if self.tau2 == 0.4 { (0.75, 1.52) } else { (1.45, 3.48) };
                BivariateCopula::khoudraji(BivariateCopula::Normal { rho: expit(eta_rho) }, expit(eta_kappa), 1.0)?
            }
        };
        Ok(ModelSpec {
            margin_x: Margin::normal(0.0, 1.0)?,
            margin_y: Margin::normal(0.0, 1.0)?,
            c1: ExchangeableCopula::Normal { rho: rho_of(TAU1) },
            c2,
            c3: ExchangeableCopula::Normal { rho: rho_of(TAU3) },
        })
    }
}

/// Scale on which a parameter is reported: correlations and Khoudraji
/// exponents as logits, everything else as is.
pub fn report_value(name: &str, theta: f64) -> f64 {
    let last = name.rsplit('.').next().unwrap_or(name);
    if last == "rho" || last.starts_with("kappa") {
        logit(theta)
    } else {
        theta
    }
}

fn report_vector(names: &[String], theta: &[f64]) -> Result<Vec<f64>> {
    let v: Vec<f64> = names.iter().zip(theta).map(|(n, &t)| report_value(n, t)).collect();
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Domain(format!("estimate {theta:?} has no finite report value")))
    }
}

/// E_B, B-denominator-minus-one variance times 10, and Monte Carlo standard
/// errors of both, for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub n_ok: usize,
    pub mean: Vec<f64>,
    pub var10: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub var10_se: Vec<f64>,
}

/// Aggregates per-replicate estimate vectors.
pub fn aggregate(estimates: &[&[f64]]) -> Result<MethodSummary> {
    let b = estimates.len();
    if b < 2 {
        return Err(Error::InsufficientData(format!("{b} successful replicates, need at least 2")));
    }
    let k = estimates[0].len();
    let bf = b as f64;
    let mean: Vec<f64> = (0..k).map(|j| estimates.iter().map(|e| e[j]).sum::<f64>() / bf).collect();
    let var: Vec<f64> = (0..k)
        .map(|j| estimates.iter().map(|e| (e[j] - mean[j]).powi(2)).sum::<f64>() / (bf - 1.0))
        .collect();
    Ok(MethodSummary {
        n_ok: b,
        mean_se: var.iter().map(|v| (v / bf).sqrt()).collect(),
        var10: var.iter().map(|v| 10.0 * v).collect(),
        var10_se: var.iter().map(|v| 10.0 * v * (2.0 / (bf - 1.0)).sqrt()).collect(),
        mean,
    })
}

/// Outcome of one replicate, on the report scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub ifm: Option<Vec<f64>>,
    pub mle: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ifm_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mle_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema: u32,
    pub scenario: ScenarioConfig,
    pub names: Vec<String>,
    /// True values on the report scale.
    pub truth: Vec<f64>,
    pub mle: MethodSummary,
    pub ifm: MethodSummary,
    pub failure_rate: f64,
    /// Set when more than 5% of replicates failed for either method.
    pub flagged: bool,
    pub replicates: Vec<ReplicateOutcome>,
}

impl McReport {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Names of the copula parameters (the columns of the published tables).
    pub fn copula_names(&self) -> Vec<&str> {
        self.names
            .iter()
            .filter(|n| !n.starts_with("margin"))
            .map(String::as_str)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: McReport = serde_json::from_str(s)?;
        if r.schema != SCHEMA_VERSION {
            return Err(Error::Data(format!("unsupported report schema {}", r.schema)));
        }
        Ok(r)
    }

    /// Table rows `name  E_B(10×V_B)` for both estimators.
    pub fn table(&self) -> String {
        let mut out = String::from("method");
        for n in self.copula_names() {
            out.push_str(&format!("\t{n}"));
        }
        out.push('\n');
        for (label, s) in [("MLE", &self.mle), ("IFM", &self.ifm)] {
            out.push_str(label);
            for n in self.copula_names() {
                let j = self.index_of(n).expect("name from list");
                out.push_str(&format!("\t{:.2}({:.2})", s.mean[j], s.var10[j]));
            }
            out.push('\n');
        }
        out
    }
}

/// One replicate: simulate with stream `index`, fit by IFM, then by maximum
/// likelihood started at the IFM estimate.
pub fn run_replicate(cfg: &ScenarioConfig, truth: &ModelSpec, index: usize) -> Result<ReplicateOutcome> {
    let families = cfg.families();
    let names: Vec<String> = families.param_info().into_iter().map(|p| p.name).collect();
    let mut rng = substream_rng(cfg.seed, index as u64);
    let data = simulate(truth, &cfg.sizes(), &mut rng)?;
    let mut out = ReplicateOutcome {
        index,
        ifm: None,
        mle: None,
        ifm_error: None,
        mle_error: None,
    };
    let ifm = fit_ifm(&families, &data).and_then(|(f, _)| Ok((report_vector(&names, &f.estimates)?, f.spec)));
    let init = match ifm {
        Ok((v, spec)) => {
            out.ifm = Some(v);
            Some(spec)
        }
        Err(e) => {
            out.ifm_error = Some(e.to_string());
            None
        }
    };
    match fit_mle(&families, &data, init.as_ref()).and_then(|f| report_vector(&names, &f.estimates)) {
        Ok(v) => out.mle = Some(v),
        Err(e) => out.mle_error = Some(e.to_string()),
    }
    Ok(out)
}

/// Runs all replicates in parallel. Replicate r always uses stream r of the
/// master seed, so the report does not depend on the thread count.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<McReport> {
    run_scenario_with(cfg, |_| {})
}

/// As [`run_scenario`], calling `progress` after each finished replicate.
pub fn run_scenario_with<P: Fn(&ReplicateOutcome) + Sync>(cfg: &ScenarioConfig, progress: P) -> Result<McReport> {
    cfg.validate()?;
    let truth = cfg.true_spec()?;
    let families = cfg.families();
    let names: Vec<String> = families.param_info().into_iter().map(|p| p.name).collect();
    let replicates: Vec<ReplicateOutcome> = (0..cfg.b)
        .into_par_iter()
        .map(|r| {
            let out = run_replicate(cfg, &truth, r)?;
            progress(&out);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    report_from_replicates(cfg, names, report_vector_truth(&families, &truth)?, replicates)
}

fn report_vector_truth(families: &ModelFamilies, truth: &ModelSpec) -> Result<Vec<f64>> {
    let names: Vec<String> = families.param_info().into_iter().map(|p| p.name).collect();
    report_vector(&names, &truth.params())
}

/// Builds the report from replicate outcomes; each estimator is averaged over
/// its own successful replicates.
pub fn report_from_replicates(
    cfg: &ScenarioConfig,
    names: Vec<String>,
    truth: Vec<f64>,
    replicates: Vec<ReplicateOutcome>,
) -> Result<McReport> {
    let ok = |f: fn(&ReplicateOutcome) -> &Option<Vec<f64>>| -> Vec<&[f64]> {
        replicates.iter().filter_map(|r| f(r).as_deref()).collect()
    };
    let mle_ok = ok(|r| &r.mle);
    let ifm_ok = ok(|r| &r.ifm);
    let b = replicates.len() as f64;
    let failure_rate = (b - mle_ok.len().min(ifm_ok.len()) as f64) / b;
    let mle = aggregate(&mle_ok)?;
    let ifm = aggregate(&ifm_ok)?;
    Ok(McReport {
        schema: SCHEMA_VERSION,
        scenario: cfg.clone(),
        names,
        truth,
        mle,
        ifm,
        failure_rate,
        flagged: failure_rate > MAX_FAILURE_RATE,
        replicates,
    })
}

/// Model fitted to the school marks data: Beta and GB3 margins, normal
/// exchangeable copulas and a survival Khoudraji-normal link.
pub fn school_spec() -> ModelSpec {
    ModelSpec {
        margin_x: Margin::Beta { a: 4.271, b: 2.359 },
        margin_y: Margin::Gb3 {
            a: 2.457,
            b: 2.470,
            lambda: 0.248,
        },
        c1: ExchangeableCopula::Normal { rho: 0.063 },
        c2: BivariateCopula::Survival {
            base: Box::new(BivariateCopula::Khoudraji {
                base: Box::new(BivariateCopula::Normal { rho: 0.795 }),
                kappa1: 0.822,
                kappa2: 0.959,
            }),
        },
        c3: ExchangeableCopula::Normal { rho: 0.161 },
    }
}

/// Reported standard errors of the school fit, in packing order.
pub const SCHOOL_SE: [f64; 10] = [0.235, 0.124, 0.245, 0.254, 0.052, 0.026, 0.024, 0.046, 0.029, 0.040];

pub const SCHOOL_CLUSTERS: usize = 48;
pub const SCHOOL_UNITS: usize = 728;
pub const SCHOOL_MIN_SIZE: usize = 4;
pub const SCHOOL_MAX_SIZE: usize = 40;

/// 48 cluster sizes in [4, 40] summing to 728: 4 + Gamma(2, 5.6) draws,
/// rounded, then nudged one unit at a time onto the target total.
pub fn school_sizes<R: Rng + ?Sized>(rng: &mut R) -> Vec<usize> {
    let extra = Gamma::new(2.0, (SCHOOL_UNITS as f64 / SCHOOL_CLUSTERS as f64 - 4.0) / 2.0).expect("valid gamma");
    let mut sizes: Vec<usize> = (0..SCHOOL_CLUSTERS)
        .map(|_| (SCHOOL_MIN_SIZE + extra.sample(rng).round() as usize).min(SCHOOL_MAX_SIZE))
        .collect();
    loop {
        let total: usize = sizes.iter().sum();
        if total == SCHOOL_UNITS {
            return sizes;
        }
        let i = rng.random_range(0..SCHOOL_CLUSTERS);
        if total < SCHOOL_UNITS && sizes[i] < SCHOOL_MAX_SIZE {
            sizes[i] += 1;
        } else if total > SCHOOL_UNITS && sizes[i] > SCHOOL_MIN_SIZE {
            sizes[i] -= 1;
        }
    }
}

/// Synthetic data on (0, 1)² drawn from [`school_spec`] with
/// [`school_sizes`] cluster sizes.
///
/// The original marks M ∈ {0, …, 40} were mapped to (M + 1/2)/41 and
/// jittered before fitting; this generator draws directly from the fitted
/// continuous model, so that step has no counterpart here.
pub fn synth_school_study(seed: u64) -> Result<HierarchicalDataset> {
    let mut rng = substream_rng(seed, 0);
    let sizes = school_sizes(&mut rng);
    simulate(&school_spec(), &sizes, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_sizes_and_truth() {
        let c = ScenarioConfig::new(C2Scenario::Normal, 0.4, 50, Design::Eq, 200, 1).unwrap();
        assert_eq!(c.sizes(), vec![18; 50]);
        let t = report_vector_truth(&c.families(), &c.true_spec().unwrap()).unwrap();
        // η1 = −0.80, η2 = 0.35, η3 = −1.69 to the published two decimals.
        for (got, want) in t[4..].iter().zip([-0.80, 0.35, -1.69]) {
            assert!((got - want).abs() < 0.011, "{got} vs {want}");
        }
        let neq = ScenarioConfig::new(C2Scenario::Clayton, 0.6, 10, Design::Neq, 200, 1).unwrap();
        assert_eq!(neq.sizes().iter().sum::<usize>(), 4 * 15 + 6 * 40);
        assert!(matches!(neq.true_spec().unwrap().c2, BivariateCopula::Clayton { delta } if (delta - 3.0).abs() < 1e-12));
        let k = ScenarioConfig::new(C2Scenario::KhoudrajiNormal, 0.4, 10, Design::Eq, 200, 1).unwrap();
        // τ = 1 − 4 ∫∫ ∂C/∂u · ∂C/∂v du dv.
        let c2 = k.true_spec().unwrap().c2;
        let rule = crate::quadrature::clustered_legendre(64);
        let mut acc = 0.0;
        for (&u, &wu) in rule.nodes.iter().zip(&rule.weights) {
            for (&v, &wv) in rule.nodes.iter().zip(&rule.weights) {
                acc += wu * wv * c2.d1(u, v) * c2.d2(u, v);
            }
        }
        let tau = 1.0 - 4.0 * acc;
        assert!((tau - 0.4).abs() < 0.01, "{tau}");
        assert!(ScenarioConfig::new(C2Scenario::KhoudrajiNormal, 0.5, 10, Design::Eq, 200, 1).is_err());
        assert!(ScenarioConfig::new(C2Scenario::Normal, 0.4, 20, Design::Eq, 200, 1).is_err());
    }

    #[test]
    fn scenario_json() {
        let c: ScenarioConfig =
            serde_json::from_str(r#"{"c2":"khoudraji-normal","tau2":0.6,"m":10,"design":"NEQ","seed":3}"#).unwrap();
        assert_eq!(c.b, DEFAULT_REPLICATES);
        assert_eq!(c.c2, C2Scenario::KhoudrajiNormal);
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn aggregation_matches_direct_formulas() {
        let reps = [vec![1.0, 2.0], vec![3.0, 2.5], vec![2.0, 0.5]];
        let refs: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
        let s = aggregate(&refs).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0 / 3.0]);
        assert!((s.var10[0] - 10.0).abs() < 1e-12);
        assert!(aggregate(&refs[..1]).is_err());
        assert!((report_value("c2.kappa1", 0.5)).abs() < 1e-15);
        assert_eq!(report_value("c2.delta", 3.0), 3.0);
    }

    #[test]
    fn small_study_is_reproducible() {
        let c = ScenarioConfig::new(C2Scenario::Normal, 0.4, 10, Design::Eq, 4, 11).unwrap();
        let a = run_scenario(&c).unwrap();
        let b = run_scenario(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates.len(), 4);
        assert!(a.table().starts_with("method\tc1.rho\tc2.rho\tc3.rho\n"));
        let back = McReport::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn school_design() {
        let d = synth_school_study(5).unwrap();
        assert_eq!(d.len(), SCHOOL_CLUSTERS);
        assert_eq!(d.n_units(), SCHOOL_UNITS);
        assert!(d.sizes().iter().all(|&n| (SCHOOL_MIN_SIZE..=SCHOOL_MAX_SIZE).contains(&n)));
        assert!(d.all_x().iter().chain(&d.all_y()).all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(d, synth_school_study(5).unwrap());
        assert_eq!(school_spec().params().len(), SCHOOL_SE.len());
    }
}
