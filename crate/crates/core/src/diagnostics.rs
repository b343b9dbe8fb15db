//! Rank-based dependence diagnostics for clustered data.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::HierarchicalDataset;
use crate::error::{Error, Result};

/// A Kendall's tau estimate. `se` is `None` when no standard error is
/// available (exchangeable tau with fewer than three usable clusters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauEstimate {
    pub tau: f64,
    pub se: Option<f64>,
    pub n_pairs: u64,
}

fn check_ties(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    match v.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(Error::Ties(format!("{what} contains the repeated value {}", w[0]))),
        None => Ok(()),
    }
}

/// Fenwick tree over 0..n counting inserted positions.
struct Fenwick(Vec<u32>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn insert(&mut self, i: usize) {
        let mut k = i + 1;
        while k < self.0.len() {
            self.0[k] += 1;
            k += k & k.wrapping_neg();
        }
    }

    /// Number of inserted positions < i.
    fn count_below(&self, i: usize) -> u64 {
        let mut k = i;
        let mut s = 0u64;
        while k > 0 {
            s += self.0[k] as u64;
            k -= k & k.wrapping_neg();
        }
        s
    }
}

/// Number of points concordant with each point, in input order. O(n log n).
fn concordance_counts(u: &[f64], v: &[f64]) -> Vec<u64> {
    let n = u.len();
    let mut by_v: Vec<usize> = (0..n).collect();
    by_v.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut v_rank = vec![0usize; n];
    for (r, &i) in by_v.iter().enumerate() {
        v_rank[i] = r;
    }
    let mut by_u: Vec<usize> = (0..n).collect();
    by_u.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
    let mut tree = Fenwick::new(n);
    let mut conc = vec![0u64; n];
    for (pos, &i) in by_u.iter().enumerate() {
        let r = v_rank[i];
        let below_before = tree.count_below(r);
        let above_after = (n - 1 - r) as u64 - (pos as u64 - below_before);
        conc[i] = below_before + above_after;
        tree.insert(r);
    }
    conc
}

/// Kendall's tau of paired samples, with the i.i.d. asymptotic standard error
/// 2·sd(h)/√n where h_i is the mean concordance sign of point i.
pub fn pooled_kendall_tau(u: &[f64], v: &[f64]) -> Result<TauEstimate> {
    let n = u.len();
    if n != v.len() {
        return Err(Error::Data(format!("tau needs equal lengths, got {n} and {}", v.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData("tau needs at least two points".into()));
    }
    check_ties(u.iter().copied(), "first sample")?;
    check_ties(v.iter().copied(), "second sample")?;
    let conc = concordance_counts(u, v);
    let pairs = (n * (n - 1) / 2) as u64;
    let total_conc: u64 = conc.iter().sum::<u64>() / 2;
    let tau = (2 * total_conc as i64 - pairs as i64) as f64 / pairs as f64;
    let m = (n - 1) as f64;
    let h: Vec<f64> = conc.iter().map(|&c| (2.0 * c as f64 - m) / m).collect();
    let se = if n > 2 {
        let mean = h.iter().sum::<f64>() / n as f64;
        let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        Some(2.0 * (var / n as f64).sqrt())
    } else {
        None
    };
    Ok(TauEstimate { tau, se, n_pairs: pairs })
}

/// Pairwise sign products summed over the ordered within-cluster pairs of
/// clusters a and b: Σ_{j≠j', l≠l'} s_{jl} s_{j'l'} with s_{jl} = sign(a_j − b_l).
/// Uses (Σs)² − Σ_j row_j² − Σ_l col_l² + Σ s², and s² = 1 without ties.
fn sign_product_sum(a: &[f64], b: &[f64]) -> i64 {
    let mut cols = vec![0i64; b.len()];
    let mut total = 0i64;
    let mut rows_sq = 0i64;
    for &x in a {
        let mut row = 0i64;
        for (l, &y) in b.iter().enumerate() {
            let s = if x > y { 1 } else { -1 };
            row += s;
            cols[l] += s;
        }
        total += row;
        rows_sq += row * row;
    }
    let cols_sq: i64 = cols.iter().map(|c| c * c).sum();
    total * total - rows_sq - cols_sq + (a.len() * b.len()) as i64
}

/// Comparison budget before the exchangeable tau switches to a random subset
/// of cluster pairs.
pub const EXCHANGEABLE_TAU_CUTOFF: u64 = 200_000_000;

/// Exchangeable Kendall's tau of values grouped by cluster.
///
/// Every ordered within-cluster pair of one cluster is compared with every
/// ordered within-cluster pair of another; tau = 2·(concordant share) − 1.
/// The standard error is a delete-one-cluster jackknife. When the number of
/// sign comparisons exceeds [`EXCHANGEABLE_TAU_CUTOFF`] a fixed-seed random
/// subset of cluster pairs is used.
pub fn exchangeable_kendall_tau(clusters: &[Vec<f64>]) -> Result<TauEstimate> {
    let usable: Vec<&Vec<f64>> = clusters.iter().filter(|c| c.len() >= 2).collect();
    let m = usable.len();
    if m < 2 {
        return Err(Error::InsufficientData(
            "exchangeable tau needs at least two clusters with two or more units".into(),
        ));
    }
    check_ties(usable.iter().flat_map(|c| c.iter().copied()), "clustered values")?;
    let ordered: Vec<u64> = usable.iter().map(|c| (c.len() * (c.len() - 1)) as u64).collect();

    let mut pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |k| (i, k))).collect();
    let cost: u64 = pairs.iter().map(|&(i, k)| (usable[i].len() * usable[k].len()) as u64).sum();
    if cost > EXCHANGEABLE_TAU_CUTOFF {
        let keep = ((pairs.len() as f64) * EXCHANGEABLE_TAU_CUTOFF as f64 / cost as f64).ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut idx = sample(&mut rng, pairs.len(), keep.max(1)).into_vec();
        idx.sort_unstable();
        pairs = idx.into_iter().map(|t| pairs[t]).collect();
    }

    let terms: Vec<(usize, usize, i64, u64)> = pairs
        .par_iter()
        .map(|&(i, k)| (i, k, sign_product_sum(usable[i], usable[k]), ordered[i] * ordered[k]))
        .collect();
    let mut p_row = vec![0i64; m];
    let mut t_row = vec![0u64; m];
    let (mut p, mut t) = (0i64, 0u64);
    for &(i, k, pik, tik) in &terms {
        p += pik;
        t += tik;
        p_row[i] += pik;
        p_row[k] += pik;
        t_row[i] += tik;
        t_row[k] += tik;
    }
    let tau = p as f64 / t as f64;
    let se = if m >= 3 {
        let loo: Vec<f64> = (0..m)
            .filter(|&c| t > t_row[c])
            .map(|c| (p - p_row[c]) as f64 / (t - t_row[c]) as f64)
            .collect();
        let k = loo.len() as f64;
        let mean = loo.iter().sum::<f64>() / k;
        Some(((k - 1.0) / k * loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt())
    } else {
        None
    };
    Ok(TauEstimate { tau, se, n_pairs: t })
}

/// Kendall's tau within each quadrant of the unit square split at (1/2, 1/2).
/// A quadrant with fewer than two points is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadrantTaus {
    /// u < 1/2, v < 1/2.
    pub lower_left: Option<TauEstimate>,
    /// u ≥ 1/2, v < 1/2.
    pub lower_right: Option<TauEstimate>,
    /// u < 1/2, v ≥ 1/2.
    pub upper_left: Option<TauEstimate>,
    /// u ≥ 1/2, v ≥ 1/2.
    pub upper_right: Option<TauEstimate>,
}

pub fn quadrant_kendall_tau(u: &[f64], v: &[f64]) -> Result<QuadrantTaus> {
    if u.len() != v.len() {
        return Err(Error::Data("quadrant tau needs equal lengths".into()));
    }
    let quad = |right: bool, upper: bool| -> Result<Option<TauEstimate>> {
        let (qu, qv): (Vec<f64>, Vec<f64>) = u
            .iter()
            .zip(v)
            .filter(|(a, b)| (**a >= 0.5) == right && (**b >= 0.5) == upper)
            .map(|(a, b)| (*a, *b))
            .unzip();
        if qu.len() < 2 {
            Ok(None)
        } else {
            pooled_kendall_tau(&qu, &qv).map(Some)
        }
    };
    Ok(QuadrantTaus {
        lower_left: quad(false, false)?,
        lower_right: quad(true, false)?,
        upper_left: quad(false, true)?,
        upper_right: quad(true, true)?,
    })
}

/// Within-unit and between-unit Spearman blocks of clustered (x, y) data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    /// Spearman matrix of (x_j, y_j) on the same unit: Σ_w + Σ_b.
    pub within: [[f64; 2]; 2],
    /// Spearman matrix of (x_j, y_k) for distinct units of one cluster,
    /// averaged over all such pairs: Σ_b.
    pub between: [[f64; 2]; 2],
    /// Cluster-level standard errors of the `between` entries.
    pub between_se: [[f64; 2]; 2],
    /// Eigenvalues of Σ_w = within − between, ascending.
    pub eigen_within: [f64; 2],
    /// Eigenvalues of Σ_b, ascending.
    pub eigen_between: [f64; 2],
    /// Largest absolute deviation of a unit-position block from `between`.
    pub max_block_deviation: f64,
    /// Number of unit-position blocks compared.
    pub n_blocks: usize,
}

fn eigen2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mid = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
    [mid - r, mid + r]
}

/// Pooled ranks scaled to (0, 1) and centred: r/(N+1) − 1/2.
fn centred_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; n];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = (k + 1) as f64 / (n + 1) as f64 - 0.5;
    }
    r
}

/// Checks the exchangeable block structure of the 2n × 2n Spearman matrix.
///
/// `max_positions` caps the unit positions j, k used for the individual
/// cross-unit blocks; blocks need at least 10 clusters holding both
/// positions.
pub fn exchangeability_structure_check(data: &HierarchicalDataset, max_positions: usize) -> Result<StructureReport> {
    let xs = data.all_x();
    let ys = data.all_y();
    check_ties(xs.iter().copied(), "x values")?;
    check_ties(ys.iter().copied(), "y values")?;
    let (rx, ry) = (centred_ranks(&xs), centred_ranks(&ys));
    let n = xs.len() as f64;
    let var = |r: &[f64]| r.iter().map(|a| a * a).sum::<f64>() / n;
    let (sx, sy) = (var(&rx).sqrt(), var(&ry).sqrt());

    let mut offsets = Vec::with_capacity(data.len());
    let mut start = 0;
    for c in &data.clusters {
        offsets.push(start..start + c.len());
        start += c.len();
    }
    let scale = [[sx * sx, sx * sy], [sy * sx, sy * sy]];
    let pick = |a: usize, i: usize| if a == 0 { rx[i] } else { ry[i] };

    let mut within = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            within[a][b] = (0..xs.len()).map(|i| pick(a, i) * pick(b, i)).sum::<f64>() / n / scale[a][b];
        }
    }

    // Per-cluster sums of cross-unit products, for the average and its se.
    let mut per_cluster: Vec<([[f64; 2]; 2], f64)> = Vec::new();
    for r in offsets.iter().filter(|r| r.len() >= 2) {
        let mut s = [[0.0; 2]; 2];
        for j in r.clone() {
            for k in r.clone() {
                if j != k {
                    for a in 0..2 {
                        for b in 0..2 {
                            s[a][b] += pick(a, j) * pick(b, k);
                        }
                    }
                }
            }
        }
        per_cluster.push((s, (r.len() * (r.len() - 1)) as f64));
    }
    if per_cluster.len() < 2 {
        return Err(Error::InsufficientData(
            "structure check needs at least two clusters with two or more units".into(),
        ));
    }
    let total_pairs: f64 = per_cluster.iter().map(|c| c.1).sum();
    let mut between = [[0.0; 2]; 2];
    let mut between_se = [[0.0; 2]; 2];
    let mc = per_cluster.len() as f64;
    for a in 0..2 {
        for b in 0..2 {
            let est = per_cluster.iter().map(|c| c.0[a][b]).sum::<f64>() / total_pairs;
            between[a][b] = est / scale[a][b];
            // Ratio-estimator linearization over clusters.
            let mean_pairs = total_pairs / mc;
            let var = per_cluster
                .iter()
                .map(|c| ((c.0[a][b] - est * c.1) / mean_pairs).powi(2))
                .sum::<f64>()
                / (mc * (mc - 1.0));
            between_se[a][b] = var.sqrt() / scale[a][b];
        }
    }

    let mut max_dev = 0.0f64;
    let mut n_blocks = 0;
    for j in 0..max_positions {
        for k in 0..max_positions {
            if j == k {
                continue;
            }
            let holders: Vec<_> = offsets.iter().filter(|r| r.len() > j.max(k)).collect();
            if holders.len() < 10 {
                continue;
            }
            n_blocks += 1;
            for a in 0..2 {
                for b in 0..2 {
                    let v = holders
                        .iter()
                        .map(|r| pick(a, r.start + j) * pick(b, r.start + k))
                        .sum::<f64>()
                        / holders.len() as f64
                        / scale[a][b];
                    max_dev = max_dev.max((v - between[a][b]).abs());
                }
            }
        }
    }
    if n_blocks == 0 {
        return Err(Error::InsufficientData(
            "no unit-position pair is shared by ten or more clusters".into(),
        ));
    }
    let sw = [
        [within[0][0] - between[0][0], within[0][1] - between[0][1]],
        [within[1][0] - between[1][0], within[1][1] - between[1][1]],
    ];
    Ok(StructureReport {
        within,
        between,
        between_se,
        eigen_within: eigen2(sw),
        eigen_between: eigen2(between),
        max_block_deviation: max_dev,
        n_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bivariate::BivariateCopula;
    use crate::exchangeable::ExchangeableCopula;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_tau(u: &[f64], v: &[f64]) -> f64 {
        let n = u.len();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                s += ((u[i] - u[j]) * (v[i] - v[j])).signum() as i64;
            }
        }
        s as f64 / (n * (n - 1) / 2) as f64
    }

    fn brute_exchangeable(clusters: &[Vec<f64>]) -> f64 {
        let (mut s, mut t) = (0i64, 0i64);
        for i in 0..clusters.len() {
            for k in i + 1..clusters.len() {
                let (a, b) = (&clusters[i], &clusters[k]);
                for j in 0..a.len() {
                    for jj in 0..a.len() {
                        if j == jj {
                            continue;
                        }
                        for l in 0..b.len() {
                            for ll in 0..b.len() {
                                if l == ll {
                                    continue;
                                }
                                s += ((a[j] - b[l]) * (a[jj] - b[ll])).signum() as i64;
                                t += 1;
                            }
                        }
                    }
                }
            }
        }
        s as f64 / t as f64
    }

    #[test]
    fn pooled_small_cases() {
        let t = pooled_kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
        assert!((t.tau + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.n_pairs, 3);
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|a| a.exp()).collect();
        let neg: Vec<f64> = x.iter().map(|a| -a).collect();
        assert_eq!(pooled_kendall_tau(&x, &y).unwrap().tau, 1.0);
        assert_eq!(pooled_kendall_tau(&x, &neg).unwrap().tau, -1.0);
        assert!(matches!(pooled_kendall_tau(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Ties(_))));
    }

    #[test]
    fn exchangeable_tiny_instance() {
        // Cluster a = (1, 4), b = (2, 3). Ordered pairs: (1,4),(4,1) vs (2,3),(3,2).
        // (1,4)~(2,3): signs (−,+) → discordant; (1,4)~(3,2): (−,+) → discordant;
        // (4,1)~(2,3): (+,−) → discordant; (4,1)~(3,2): (+,−) → discordant.
        let t = exchangeable_kendall_tau(&[vec![1.0, 4.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(t.tau, -1.0);
        assert_eq!(t.n_pairs, 4);
        assert_eq!(t.se, None);
        let t = exchangeable_kendall_tau(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.tau, 1.0);
        assert!(exchangeable_kendall_tau(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(matches!(
            exchangeable_kendall_tau(&[vec![1.0, 2.0], vec![2.0, 4.0]]),
            Err(Error::Ties(_))
        ));
    }

    proptest! {
        #[test]
        fn pooled_matches_brute_force(pts in proptest::collection::hash_set((0u32..10_000, 0u32..10_000), 2..200)) {
            let pts: Vec<_> = pts.into_iter().collect();
            let u: Vec<f64> = pts.iter().enumerate().map(|(i, p)| p.0 as f64 + i as f64 * 1e-6).collect();
            let v: Vec<f64> = pts.iter().enumerate().map(|(i, p)| p.1 as f64 - i as f64 * 1e-7).collect();
            let t = pooled_kendall_tau(&u, &v).unwrap();
            prop_assert_eq!(t.tau, brute_tau(&u, &v));
        }

        #[test]
        fn exchangeable_matches_brute_force(sizes in proptest::collection::vec(1usize..5, 2..6), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clusters: Vec<Vec<f64>> = sizes.iter().map(|&n| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
            prop_assume!(clusters.iter().filter(|c| c.len() >= 2).count() >= 2);
            let t = exchangeable_kendall_tau(&clusters).unwrap();
            let want = brute_exchangeable(&clusters.iter().filter(|c| c.len() >= 2).cloned().collect::<Vec<_>>());
            prop_assert_eq!(t.tau, want);
        }

        #[test]
        fn exchangeable_invariances(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clusters: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
            let base = exchangeable_kendall_tau(&clusters).unwrap();
            let mut shuffled = clusters.clone();
            shuffled.reverse();
            for c in &mut shuffled { c.rotate_left(1); }
            let transformed: Vec<Vec<f64>> = shuffled.iter().map(|c| c.iter().map(|x| x.powi(3).exp()).collect()).collect();
            let t = exchangeable_kendall_tau(&transformed).unwrap();
            prop_assert_eq!(t.tau, base.tau);
            prop_assert!((t.se.unwrap() - base.se.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn exchangeable_tau_of_normal_clusters() {
        let c = ExchangeableCopula::Normal { rho: 0.156 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clusters: Vec<Vec<f64>> = (0..2000).map(|_| c.sample(5, &mut rng).unwrap()).collect();
        let t = exchangeable_kendall_tau(&clusters).unwrap();
        let want = std::f64::consts::FRAC_2_PI * 0.156f64.asin();
        assert!((t.tau - want).abs() < 0.015, "{t:?} vs {want}");
        let se = t.se.unwrap();
        assert!(se > 0.002 && se < 0.02, "{se}");

        let iid = ExchangeableCopula::Independence;
        let clusters: Vec<Vec<f64>> = (0..500).map(|_| iid.sample(4, &mut rng).unwrap()).collect();
        let t = exchangeable_kendall_tau(&clusters).unwrap();
        assert!(t.tau.abs() < 3.0 * t.se.unwrap(), "{t:?}");
    }

    #[test]
    fn pooled_se_is_calibrated() {
        let c = BivariateCopula::Normal { rho: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fits: Vec<TauEstimate> = (0..300)
            .map(|_| {
                let (u, v): (Vec<f64>, Vec<f64>) = (0..200).map(|_| c.sample(&mut rng).unwrap()).unzip();
                pooled_kendall_tau(&u, &v).unwrap()
            })
            .collect();
        let mean = fits.iter().map(|t| t.tau).sum::<f64>() / 300.0;
        let sd = (fits.iter().map(|t| (t.tau - mean).powi(2)).sum::<f64>() / 299.0).sqrt();
        let avg_se = fits.iter().map(|t| t.se.unwrap()).sum::<f64>() / 300.0;
        assert!((avg_se / sd - 1.0).abs() < 0.15, "se {avg_se} vs sd {sd}");
    }

    #[test]
    fn quadrants_reflect_tail_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draw = |c: &BivariateCopula, rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
            (0..20_000).map(|_| c.sample(rng).unwrap()).unzip()
        };
        let (u, v) = draw(&BivariateCopula::Clayton { delta: 3.0 }, &mut rng);
        let q = quadrant_kendall_tau(&u, &v).unwrap();
        assert!(q.lower_left.unwrap().tau > q.upper_right.unwrap().tau + 0.1);
        let (u, v) = draw(&BivariateCopula::Normal { rho: 0.6 }, &mut rng);
        let q = quadrant_kendall_tau(&u, &v).unwrap();
        let (ll, ur) = (q.lower_left.unwrap(), q.upper_right.unwrap());
        assert!((ll.tau - ur.tau).abs() < 3.0 * (ll.se.unwrap().hypot(ur.se.unwrap())));
        let q = quadrant_kendall_tau(&[0.1, 0.2, 0.7], &[0.1, 0.3, 0.2]).unwrap();
        assert!(q.lower_left.is_some() && q.lower_right.is_none() && q.upper_right.is_none());
    }
}
