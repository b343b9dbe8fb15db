//! The joint model for clustered pairs.
//!
//! For a cluster of size n with ranks u_j = F(x_j), v_j = G(y_j) the copula
//! density is
//!
//! c(u, v) = c1_n(u) · Π_j c2(u_j, v_j) · c3_n(w),   w_j = h(v_j | u_j),
//!
//! where c1, c3 are exchangeable and c2 is bivariate. Parameters pack into a
//! flat vector in the order (marginX | marginY | c1 | c2 | c3), each block in
//! the order of its family's `param_info`.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bivariate::{BivariateCopula, BivariateFamily};
use crate::clip;
use crate::data::{Cluster, HierarchicalDataset};
use crate::error::{Error, Result};
use crate::exchangeable::{ExchangeableCopula, ExchangeableFamily};
use crate::margins::{Margin, MarginFamily};
use crate::transform::ParamInfo;

/// Version tag written into every JSON document.
pub const SCHEMA_VERSION: u32 = 1;

fn check_schema(schema: u32) -> Result<()> {
    if schema == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "unsupported schema version {schema} (expected {SCHEMA_VERSION})"
        )))
    }
}

/// The five component families, without parameter values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelFamilies {
    pub margin_x: MarginFamily,
    pub margin_y: MarginFamily,
    pub c1: ExchangeableFamily,
    pub c2: BivariateFamily,
    pub c3: ExchangeableFamily,
}

#[derive(Serialize, Deserialize)]
struct FamiliesFile {
    schema: u32,
    #[serde(flatten)]
    families: ModelFamilies,
}

impl ModelFamilies {
    pub fn n_params(&self) -> usize {
        self.blocks()[4].end
    }

    /// Index ranges of the (marginX, marginY, c1, c2, c3) blocks.
    pub fn blocks(&self) -> [Range<usize>; 5] {
        let sizes = [
            self.margin_x.n_params(),
            self.margin_y.n_params(),
            self.c1.n_params(),
            self.c2.n_params(),
            self.c3.n_params(),
        ];
        let mut start = 0;
        sizes.map(|k| {
            let r = start..start + k;
            start += k;
            r
        })
    }

    /// Parameter names (prefixed by component) and transforms in packing order.
    pub fn param_info(&self) -> Vec<ParamInfo> {
        let prefixed = |prefix: &str, info: Vec<ParamInfo>| {
            info.into_iter()
                .map(|p| ParamInfo::new(format!("{prefix}.{}", p.name), p.transform))
                .collect::<Vec<_>>()
        };
        [
            prefixed("marginX", self.margin_x.param_info()),
            prefixed("marginY", self.margin_y.param_info()),
            prefixed("c1", self.c1.param_info()),
            prefixed("c2", self.c2.param_info()),
            prefixed("c3", self.c3.param_info()),
        ]
        .concat()
    }

    /// Builds the model from natural parameters in packing order.
    pub fn build(&self, theta: &[f64]) -> Result<ModelSpec> {
        if theta.len() != self.n_params() {
            return Err(Error::InvalidParameter(format!(
                "model takes {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        let [bx, by, b1, b2, b3] = self.blocks();
        Ok(ModelSpec {
            margin_x: Margin::from_params(self.margin_x, &theta[bx])?,
            margin_y: Margin::from_params(self.margin_y, &theta[by])?,
            c1: self.c1.build(&theta[b1])?,
            c2: self.c2.build(&theta[b2])?,
            c3: self.c3.build(&theta[b3])?,
        })
    }

    /// Natural → unconstrained coordinates.
    pub fn to_eta(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.param_info())
            .map(|(t, p)| p.transform.forward(*t))
            .collect()
    }

    /// Unconstrained → natural coordinates.
    pub fn from_eta(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter()
            .zip(self.param_info())
            .map(|(e, p)| p.transform.inverse(*e))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FamiliesFile {
            schema: SCHEMA_VERSION,
            families: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FamiliesFile = serde_json::from_str(s)?;
        check_schema(f.schema)?;
        Ok(f.families)
    }
}

/// A fully specified model θ = (α, β, δ1, δ2, δ3).
///
/// Serializes as `{schema, marginX: {family, params}, marginY, c1, c2, c3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFile", into = "SpecFile")]
pub struct ModelSpec {
    pub margin_x: Margin,
    pub margin_y: Margin,
    pub c1: ExchangeableCopula,
    pub c2: BivariateCopula,
    pub c3: ExchangeableCopula,
}

#[derive(Serialize, Deserialize)]
struct Component<F> {
    family: F,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SpecFile {
    schema: u32,
    margin_x: Component<MarginFamily>,
    margin_y: Component<MarginFamily>,
    c1: Component<ExchangeableFamily>,
    c2: Component<BivariateFamily>,
    c3: Component<ExchangeableFamily>,
}

impl ModelSpec {
    pub fn families(&self) -> ModelFamilies {
        ModelFamilies {
            margin_x: self.margin_x.family(),
            margin_y: self.margin_y.family(),
            c1: self.c1.family(),
            c2: self.c2.family(),
            c3: self.c3.family(),
        }
    }

    /// Natural parameters in packing order.
    pub fn params(&self) -> Vec<f64> {
        let fams = self.families();
        [
            self.margin_x.params(),
            self.margin_y.params(),
            self.c1.params(),
            self.c2.params_for(&fams.c2),
            self.c3.params(),
        ]
        .concat()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl From<ModelSpec> for SpecFile {
    fn from(s: ModelSpec) -> Self {
        let fams = s.families();
        SpecFile {
            schema: SCHEMA_VERSION,
            margin_x: Component {
                family: fams.margin_x,
                params: s.margin_x.params(),
            },
            margin_y: Component {
                family: fams.margin_y,
                params: s.margin_y.params(),
            },
            c1: Component {
                family: fams.c1,
                params: s.c1.params(),
            },
            c2: Component {
                params: s.c2.params_for(&fams.c2),
                family: fams.c2,
            },
            c3: Component {
                family: fams.c3,
                params: s.c3.params(),
            },
        }
    }
}

impl TryFrom<SpecFile> for ModelSpec {
    type Error = Error;

    fn try_from(f: SpecFile) -> Result<Self> {
        check_schema(f.schema)?;
        Ok(ModelSpec {
            margin_x: Margin::from_params(f.margin_x.family, &f.margin_x.params)?,
            margin_y: Margin::from_params(f.margin_y.family, &f.margin_y.params)?,
            c1: f.c1.family.build(&f.c1.params)?,
            c2: f.c2.family.build(&f.c2.params)?,
            c3: f.c3.family.build(&f.c3.params)?,
        })
    }
}

/// Clipped ranks of `values` under margin `m`.
pub fn margin_ranks(m: &Margin, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&x| clip(m.cdf(x))).collect()
}

/// Clipped residual ranks w_j = h(v_j | u_j).
pub fn residual_ranks(c2: &BivariateCopula, u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter().zip(v).map(|(&u, &v)| clip(c2.d1(clip(u), clip(v)))).collect()
}

/// Ranks (u, v, w) of every unit, aligned with the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

impl PseudoObservations {
    pub fn new(spec: &ModelSpec, data: &HierarchicalDataset) -> Self {
        let u: Vec<Vec<f64>> = data.clusters.iter().map(|c| margin_ranks(&spec.margin_x, &c.x)).collect();
        let v: Vec<Vec<f64>> = data.clusters.iter().map(|c| margin_ranks(&spec.margin_y, &c.y)).collect();
        let w = u.iter().zip(&v).map(|(u, v)| residual_ranks(&spec.c2, u, v)).collect();
        Self { u, v, w }
    }
}

/// Residual ranks of one cluster under `spec`.
pub fn cluster_residual_ranks(spec: &ModelSpec, cluster: &Cluster) -> Vec<f64> {
    let u = margin_ranks(&spec.margin_x, &cluster.x);
    let v = margin_ranks(&spec.margin_y, &cluster.y);
    residual_ranks(&spec.c2, &u, &v)
}

fn check_unit_interval(name: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
        Some(j) => Err(Error::Boundary(format!(
            "{name}[{j}] = {} must lie strictly inside (0, 1)",
            xs[j]
        ))),
        None => Ok(()),
    }
}

/// Log of the joint copula density of one cluster.
pub fn copula_log_density(spec: &ModelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::Data(format!(
            "copula density needs equal nonempty u and v, got lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    check_unit_interval("u", u)?;
    check_unit_interval("v", v)?;
    let l2: f64 = u.iter().zip(v).map(|(&a, &b)| spec.c2.ln_density(a, b)).sum();
    let w = residual_ranks(&spec.c2, u, v);
    Ok(spec.c1.ln_density(u)? + l2 + spec.c3.ln_density(&w)?)
}

/// The n = 2 D-vine density
/// c_uu(u1, u2) · c_uv(u1, v1) · c_uv(u2, v2) · c_res(h(v1|u1), h(v2|u2)),
/// with the two conditional pair copulas linking V1 to U2 and U1 to V2
/// set to independence. Used to cross-check [`copula_log_density`].
pub fn dvine_density_n2(
    c_uu: &BivariateCopula,
    c_uv: &BivariateCopula,
    c_res: &BivariateCopula,
    (u1, v1): (f64, f64),
    (u2, v2): (f64, f64),
) -> Result<f64> {
    let w1 = clip(c_uv.h(v1, u1)?);
    let w2 = clip(c_uv.h(v2, u2)?);
    Ok(c_uu.density(u1, u2)? * c_uv.density(u1, v1)? * c_uv.density(u2, v2)? * c_res.density(w1, w2)?)
}

/// Simulates one cluster per entry of `sizes`.
///
/// Per cluster the draws are: the c1 sample for U, then the c3 sample for W
/// (see [`ExchangeableCopula::sample`] for their internal order). Then
/// V_j = h⁻¹(W_j | U_j), X = F⁻¹(U), Y = G⁻¹(V). Clusters are labelled 1..m.
pub fn simulate<R: Rng + ?Sized>(spec: &ModelSpec, sizes: &[usize], rng: &mut R) -> Result<HierarchicalDataset> {
    if let Some(i) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("cluster size {i} is zero")));
    }
    let mut clusters = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let u = spec.c1.sample(n, rng)?;
        let w = spec.c3.sample(n, rng)?;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for (&u, &w) in u.iter().zip(&w) {
            let (u, w) = (clip(u), clip(w));
            let v = clip(spec.c2.h_inverse(w, u)?);
            x.push(spec.margin_x.quantile(u)?);
            y.push(spec.margin_y.quantile(v)?);
        }
        clusters.push(Cluster {
            label: (i + 1).to_string(),
            x,
            y,
        });
    }
    Ok(HierarchicalDataset { clusters })
}

/// The five terms of the full log-likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LogLikTerms {
    pub margin_x: f64,
    pub margin_y: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl LogLikTerms {
    pub fn total(&self) -> f64 {
        self.margin_x + self.margin_y + self.c2 + self.c1 + self.c3
    }
}

impl std::ops::Add for LogLikTerms {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            margin_x: self.margin_x + o.margin_x,
            margin_y: self.margin_y + o.margin_y,
            c1: self.c1 + o.c1,
            c2: self.c2 + o.c2,
            c3: self.c3 + o.c3,
        }
    }
}

fn cluster_terms(spec: &ModelSpec, i: usize, c: &Cluster) -> Result<LogLikTerms> {
    let n = c.len();
    let mut t = LogLikTerms::default();
    let mut u = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for j in 0..n {
        let lf = spec.margin_x.ln_pdf(c.x[j]);
        let lg = spec.margin_y.ln_pdf(c.y[j]);
        let uj = clip(spec.margin_x.cdf(c.x[j]));
        let vj = clip(spec.margin_y.cdf(c.y[j]));
        let l2 = spec.c2.ln_density(uj, vj);
        let wj = clip(spec.c2.d1(uj, vj));
        if !(lf.is_finite() && lg.is_finite() && l2.is_finite() && wj.is_finite()) {
            return Err(Error::NonFinite { cluster: i, unit: Some(j) });
        }
        t.margin_x += lf;
        t.margin_y += lg;
        t.c2 += l2;
        u.push(uj);
        w.push(wj);
    }
    t.c1 = spec.c1.ln_density(&u)?;
    t.c3 = spec.c3.ln_density(&w)?;
    if !(t.c1.is_finite() && t.c3.is_finite()) {
        return Err(Error::NonFinite { cluster: i, unit: None });
    }
    Ok(t)
}

/// Full log-likelihood with its five-term breakdown. Clusters are evaluated
/// in parallel and summed in cluster order, so the result does not depend on
/// the thread count.
pub fn full_log_likelihood(spec: &ModelSpec, data: &HierarchicalDataset) -> Result<LogLikTerms> {
    let per_cluster: Vec<LogLikTerms> = data
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| cluster_terms(spec, i, c))
        .collect::<Result<_>>()?;
    Ok(per_cluster.into_iter().fold(LogLikTerms::default(), |a, b| a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bivariate::KhoudrajiShapes;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_normal(rho1: f64, rho2: f64, rho3: f64) -> ModelSpec {
        ModelSpec {
            margin_x: Margin::normal(0.3, 1.7).unwrap(),
            margin_y: Margin::normal(-1.0, 0.6).unwrap(),
            c1: ExchangeableCopula::Normal { rho: rho1 },
            c2: BivariateCopula::Normal { rho: rho2 },
            c3: ExchangeableCopula::Normal { rho: rho3 },
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

    #[test]
    fn single_unit_reduces_to_link_copula() {
        let s = school();
        let got = copula_log_density(&s, &[0.3], &[0.8]).unwrap();
        assert!((got - s.c2.ln_density(0.3, 0.8)).abs() < 1e-14);
    }

    #[test]
    fn independent_clusters_reduce_to_iid_copula() {
        let mut s = school();
        s.c1 = ExchangeableCopula::Independence;
        s.c3 = ExchangeableCopula::Independence;
        let (u, v) = ([0.1, 0.5, 0.77], [0.4, 0.45, 0.9]);
        let want: f64 = u.iter().zip(&v).map(|(a, b)| s.c2.ln_density(*a, *b)).sum();
        assert!((copula_log_density(&s, &u, &v).unwrap() - want).abs() < 1e-13);
        assert!(copula_log_density(&s, &[0.0, 0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn matches_dvine_for_pairs() {
        let specs = [
            all_normal(0.31, 0.59, 0.156),
            ModelSpec {
                c1: ExchangeableCopula::Clayton { delta: 0.7 },
                c2: BivariateCopula::Frank { delta: -3.0 },
                c3: ExchangeableCopula::Frank { delta: 2.0 },
                ..school()
            },
            school(),
        ];
        let grid = [0.05, 0.3, 0.5, 0.71, 0.95];
        for s in &specs {
            for &u1 in &grid {
                for &v1 in &grid {
                    for &u2 in &grid {
                        for &v2 in &grid {
                            let a = copula_log_density(s, &[u1, u2], &[v1, v2]).unwrap().exp();
                            let b = dvine_density_n2(
                                &s.c1.bivariate_margin(),
                                &s.c2,
                                &s.c3.bivariate_margin(),
                                (u1, v1),
                                (u2, v2),
                            )
                            .unwrap();
                            assert!((a - b).abs() <= 1e-12 * b, "{s:?} {u1} {v1} {u2} {v2}: {a} vs {b}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn permutation_invariance_of_pairs() {
        let s = school();
        let u = [0.12, 0.5, 0.77, 0.33];
        let v = [0.4, 0.45, 0.9, 0.2];
        let base = copula_log_density(&s, &u, &v).unwrap();
        let perm = [2, 0, 3, 1];
        let pu: Vec<f64> = perm.iter().map(|&k| u[k]).collect();
        let pv: Vec<f64> = perm.iter().map(|&k| v[k]).collect();
        assert!((copula_log_density(&s, &pu, &pv).unwrap() - base).abs() < 1e-12);
    }

    fn sample_data(s: &ModelSpec, sizes: &[usize], seed: u64) -> HierarchicalDataset {
        simulate(s, sizes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn loglik_decomposes() {
        let s = school();
        let d = sample_data(&s, &[3, 1, 7, 4], 5);
        let t = full_log_likelihood(&s, &d).unwrap();
        let lf: f64 = d.all_x().iter().map(|&x| s.margin_x.ln_pdf(x)).sum();
        let lg: f64 = d.all_y().iter().map(|&y| s.margin_y.ln_pdf(y)).sum();
        let lc: f64 = d
            .clusters
            .iter()
            .map(|c| {
                copula_log_density(&s, &margin_ranks(&s.margin_x, &c.x), &margin_ranks(&s.margin_y, &c.y)).unwrap()
            })
            .sum();
        assert!((t.total() - (lf + lg + lc)).abs() < 1e-9 * (1.0 + t.total().abs()));

        let mut indep = s.clone();
        indep.c1 = ExchangeableCopula::Independence;
        indep.c2 = BivariateCopula::Independence;
        indep.c3 = ExchangeableCopula::Independence;
        let ti = full_log_likelihood(&indep, &d).unwrap();
        assert_eq!(ti.total(), lf + lg);
    }

    /// Joint log-density of one cluster under the all-normal model, from the
    /// dense 2n × 2n covariance of (X, Y).
    fn dense_gaussian_loglik(s: &ModelSpec, c: &Cluster) -> f64 {
        let (Margin::Normal { mu: m1, sigma: s1 }, Margin::Normal { mu: m2, sigma: s2 }) = (s.margin_x, s.margin_y)
        else {
            unreachable!()
        };
        let (ExchangeableCopula::Normal { rho: r1 }, BivariateCopula::Normal { rho: r2 }, ExchangeableCopula::Normal { rho: r3 }) =
            (s.c1, s.c2.clone(), s.c3)
        else {
            unreachable!()
        };
        let n = c.len();
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            for k in 0..n {
                let same = j == k;
                let xx = if same { 1.0 } else { r1 };
                let xy = if same { r2 } else { r1 * r2 };
                let yy = if same { 1.0 } else { r1 * r2 * r2 + r3 * (1.0 - r2 * r2) };
                cov[(j, k)] = xx * s1 * s1;
                cov[(j, n + k)] = xy * s1 * s2;
                cov[(n + k, j)] = xy * s1 * s2;
                cov[(n + j, n + k)] = yy * s2 * s2;
            }
        }
        let z = DVector::from_iterator(2 * n, c.x.iter().map(|x| x - m1).chain(c.y.iter().map(|y| y - m2)));
        let chol = cov.cholesky().unwrap();
        let ln_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let q = z.dot(&chol.solve(&z));
        -0.5 * (2 * n) as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * ln_det - 0.5 * q
    }

    #[test]
    fn all_normal_matches_dense_gaussian() {
        let s = all_normal(0.31, 0.59, 0.156);
        let d = sample_data(&s, &[1, 2, 5, 12], 9);
        let got = full_log_likelihood(&s, &d).unwrap().total();
        let want: f64 = d.clusters.iter().map(|c| dense_gaussian_loglik(&s, c)).sum();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn packing_roundtrip() {
        let s = school();
        let fams = s.families();
        assert_eq!(fams.n_params(), 10);
        let theta = s.params();
        assert_eq!(theta, vec![4.271, 2.359, 2.457, 2.470, 0.248, 0.063, 0.795, 0.822, 0.959, 0.161]);
        let back = fams.build(&fams.from_eta(&fams.to_eta(&theta))).unwrap();
        for (a, b) in back.params().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12);
        }
        let names: Vec<String> = fams.param_info().into_iter().map(|p| p.name).collect();
        assert_eq!(names[4], "marginY.lambda");
        assert_eq!(names[8], "c2.kappa2");
        assert!(fams.build(&theta[..9]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let s = school();
        let json = s.to_json().unwrap();
        assert!(json.contains("\"marginX\"") && json.contains("survival-khoudraji2-normal"));
        assert_eq!(ModelSpec::from_json(&json).unwrap(), s);
        let fams = s.families();
        assert_eq!(ModelFamilies::from_json(&fams.to_json().unwrap()).unwrap(), fams);
        let bad = json.replace("\"schema\": 1", "\"schema\": 2");
        assert!(ModelSpec::from_json(&bad).is_err());
        let one_k = ModelFamilies {
            c2: BivariateFamily::khoudraji(BivariateFamily::Normal, KhoudrajiShapes::U),
            ..fams
        };
        assert_eq!(one_k.n_params(), 9);
    }

    #[test]
    fn simulation_is_reproducible_and_rejects_empty_clusters() {
        let s = school();
        assert_eq!(sample_data(&s, &[4, 6], 1), sample_data(&s, &[4, 6], 1));
        assert_ne!(sample_data(&s, &[4, 6], 1), sample_data(&s, &[4, 6], 2));
        assert!(simulate(&s, &[3, 0], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let d = sample_data(&s, &[40; 10], 3);
        assert!(d.all_x().iter().chain(d.all_y().iter()).all(|&t| t > 0.0 && t < 1.0));
    }

    #[test]
    fn normal_link_gives_linear_regression_slope() {
        // Y | X is linear with slope ρ2 σ2 / σ1 under normal margins and link.
        let s = all_normal(0.31, 0.59, 0.156);
        let d = sample_data(&s, &[10; 2000], 11);
        let (x, y) = (d.all_x(), d.all_y());
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let want = 0.59 * 0.6 / 1.7;
        // Cluster effects inflate the i.i.d. se; allow a generous multiple of it.
        let resid: f64 = x.iter().zip(&y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum::<f64>() / (n - 2.0);
        let se = (resid / sxx).sqrt();
        assert!((slope - want).abs() < 4.0 * se, "{slope} vs {want} (se {se})");
    }

    #[test]
    fn marginalizing_the_last_pair() {
        let s = ModelSpec {
            c1: ExchangeableCopula::Normal { rho: 0.4 },
            c2: BivariateCopula::Clayton { delta: 1.33 },
            c3: ExchangeableCopula::Normal { rho: 0.3 },
            ..all_normal(0.0, 0.0, 0.0)
        };
        let rule = crate::quadrature::clustered_legendre(64);
        let (u1, v1) = (0.3, 0.75);
        let mut total = 0.0;
        for (&u2, &wu) in rule.nodes.iter().zip(&rule.weights) {
            for (&v2, &wv) in rule.nodes.iter().zip(&rule.weights) {
                total += wu * wv * copula_log_density(&s, &[u1, u2], &[v1, v2]).unwrap().exp();
            }
        }
        let want = s.c2.ln_density(u1, v1).exp();
        assert!((total - want).abs() < 1e-5, "{total} vs {want}");
    }
}
