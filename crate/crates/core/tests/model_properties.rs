use hiercop::bivariate::BivariateCopula;
use hiercop::data::HierarchicalDataset;
use hiercop::exchangeable::ExchangeableCopula;
use hiercop::margins::Margin;
use hiercop::model::{copula_log_density, dvine_density_n2, full_log_likelihood, margin_ranks, simulate, ModelSpec};
use hiercop::special::norm_quantile;
use hiercop::substream_rng;

fn mixed_spec() -> ModelSpec {
    ModelSpec {
        margin_x: Margin::beta(4.271, 2.359).unwrap(),
        margin_y: Margin::gb3(2.457, 2.470, 0.248).unwrap(),
        c1: ExchangeableCopula::Clayton { delta: 0.4 },
        c2: BivariateCopula::khoudraji(BivariateCopula::Normal { rho: 0.7 }, 0.8, 1.0).unwrap(),
        c3: ExchangeableCopula::Frank { delta: 1.5 },
    }
}

fn all_normal(r1: f64, r2: f64, r3: f64) -> ModelSpec {
    ModelSpec {
        margin_x: Margin::Normal { mu: 0.0, sigma: 1.0 },
        margin_y: Margin::Normal { mu: 0.0, sigma: 1.0 },
        c1: ExchangeableCopula::Normal { rho: r1 },
        c2: BivariateCopula::Normal { rho: r2 },
        c3: ExchangeableCopula::Normal { rho: r3 },
    }
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn partial_corr(a: &[f64], b: &[f64], given: &[f64]) -> f64 {
    let (rab, rag, rbg) = (corr(a, b), corr(a, given), corr(b, given));
    (rab - rag * rbg) / ((1.0 - rag * rag) * (1.0 - rbg * rbg)).sqrt()
}

/// Normal scores of the first two units of every cluster: (u1, v1, u2, v2).
fn pair_scores(data: &HierarchicalDataset) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for c in &data.clusters {
        for (k, z) in [c.x[0], c.y[0], c.x[1], c.y[1]].into_iter().enumerate() {
            out[k].push(z);
        }
    }
    out
}

#[test]
fn log_likelihood_splits_into_margins_and_copula() {
    let spec = mixed_spec();
    let data = simulate(&spec, &[3, 7, 1, 12, 5], &mut substream_rng(11, 0)).unwrap();
    let mut want = 0.0;
    for c in &data.clusters {
        want += c.x.iter().map(|&x| spec.margin_x.ln_pdf(x)).sum::<f64>();
        want += c.y.iter().map(|&y| spec.margin_y.ln_pdf(y)).sum::<f64>();
        let u = margin_ranks(&spec.margin_x, &c.x);
        let v = margin_ranks(&spec.margin_y, &c.y);
        want += copula_log_density(&spec, &u, &v).unwrap();
    }
    let got = full_log_likelihood(&spec, &data).unwrap().total();
    assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn pair_density_matches_vine_with_independent_cross_links() {
    let spec = ModelSpec {
        c1: ExchangeableCopula::Clayton { delta: 1.3 },
        c2: BivariateCopula::Gumbel { delta: 1.8 },
        c3: ExchangeableCopula::Frank { delta: 2.0 },
        ..mixed_spec()
    };
    for (u, v) in [([0.2, 0.7], [0.35, 0.9]), ([0.05, 0.5], [0.6, 0.01]), ([0.93, 0.88], [0.4, 0.97])] {
        let got = copula_log_density(&spec, &u, &v).unwrap().exp();
        let want = dvine_density_n2(
            &spec.c1.bivariate_margin(),
            &spec.c2,
            &spec.c3.bivariate_margin(),
            (u[0], v[0]),
            (u[1], v[1]),
        )
        .unwrap();
        assert!((got / want - 1.0).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn simulated_normal_scores_have_the_implied_correlations() {
    let (r1, r2, r3) = (0.31, 0.59, 0.3);
    let data = simulate(&all_normal(r1, r2, r3), &vec![2; 6000], &mut substream_rng(12, 0)).unwrap();
    let [u1, v1, u2, v2] = pair_scores(&data);
    let tol = 4.0 / (u1.len() as f64).sqrt();
    for (got, want) in [
        (corr(&u1, &u2), r1),
        (corr(&u1, &v1), r2),
        (corr(&v1, &u2), r1 * r2),
        (corr(&v1, &v2), r2 * r2 * r1 + (1.0 - r2 * r2) * r3),
    ] {
        assert!((got - want).abs() < tol, "{got} vs {want}");
    }
}

/// Given its own covariate a unit's response carries no information about a
/// sibling's covariate; it only does through the siblings' responses.
#[test]
fn response_is_independent_of_sibling_covariates_given_its_own() {
    let spec = ModelSpec {
        margin_x: Margin::beta(2.0, 3.0).unwrap(),
        ..all_normal(0.6, 0.7, 0.5)
    };
    let data = simulate(&spec, &vec![2; 6000], &mut substream_rng(13, 0)).unwrap();
    let [x1, y1, x2, y2] = pair_scores(&data);
    let z = |xs: &[f64], m: &Margin| -> Vec<f64> { margin_ranks(m, xs).into_iter().map(norm_quantile).collect() };
    let (u1, u2) = (z(&x1, &spec.margin_x), z(&x2, &spec.margin_x));
    let tol = 4.0 / (u1.len() as f64).sqrt();
    let pc = partial_corr(&y1, &u2, &u1);
    assert!(pc.abs() < tol, "partial correlation {pc}");
    assert!(partial_corr(&y1, &y2, &u1).abs() > 5.0 * tol);
}
