//! Meta-evaluation: how well does a metric agree with an oracle judgment?
//!
//! The paired protocol scores each sample twice (clean/matched versus
//! noised/mismatched) and reports:
//!
//! - accuracy: fraction of pairs with the positive score strictly higher
//!   (ties count as incorrect);
//! - triplet Kendall's Tau: (concordant − discordant) / n, where a pair is
//!   concordant when the positive side wins and discordant otherwise; when
//!   every pair ties exactly the statistic is undefined and reported as None;
//! - Pearson and Spearman between the pooled scores and the binary oracle
//!   labels (1 for positive, 0 for negative).
//!
//! Generic rank statistics ([`kendall_tau`], [`pearson`], [`spearman`]) use
//! their textbook definitions; Kendall is tau-a, so ties shrink |tau|.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, rng_from_seed, sample_without_replacement};

/// One clean-versus-perturbed judgment.
#[derive(Debug, Clone, Serialize)]
pub struct JudgmentPair {
    pub id: String,
    pub score_pos: f64,
    pub score_neg: f64,
}

/// Fraction of pairs where the positive side strictly wins.
pub fn accuracy(pairs: &[JudgmentPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("accuracy over no pairs".into()));
    }
    let wins = pairs.iter().filter(|p| p.score_pos > p.score_neg).count();
    Ok(wins as f64 / pairs.len() as f64)
}

/// Triplet-protocol Kendall's Tau; None when every pair ties exactly.
pub fn triplet_kendall_tau(pairs: &[JudgmentPair]) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("kendall tau over no pairs".into()));
    }
    let concordant = pairs.iter().filter(|p| p.score_pos > p.score_neg).count();
    let ties = pairs.iter().filter(|p| p.score_pos == p.score_neg).count();
    if ties == pairs.len() {
        return Ok(None);
    }
    let discordant = pairs.len() - concordant;
    Ok(Some((concordant as f64 - discordant as f64) / pairs.len() as f64))
}

fn check_paired(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired vectors of {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least two points".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Kendall's tau-a: (concordant − discordant) / C(n,2). Ties count in
/// neither, so they reduce |tau|.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired(a, b)?;
    let n = a.len();
    let mut net = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let sa = (a[j] - a[i]).partial_cmp(&0.0).unwrap() as i64;
            let sb = (b[j] - b[i]).partial_cmp(&0.0).unwrap() as i64;
            net += sa * sb;
        }
    }
    Ok(net as f64 / (n * (n - 1) / 2) as f64)
}

/// Pearson's r. Errors with [`Error::ZeroVariance`] when either input is
/// constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired(a, b)?;
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Spearman's rho: Pearson over average-tied ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Ranks 1..n with ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|x, y| values[*x].partial_cmp(&values[*y]).unwrap());
    let mut ranks = vec![0.0f64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for slot in &order[i..=j] {
            ranks[*slot] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Summary statistics over a set of judgment pairs.
#[derive(Debug, Clone, Serialize)]
pub struct MetaEvalSummary {
    pub n: usize,
    pub accuracy: f64,
    /// Triplet Kendall's Tau; null when undefined (all ties).
    pub kendall_tau: Option<f64>,
    /// Pearson of pooled scores against binary oracle labels; null when the
    /// scores have zero variance.
    pub pearson: Option<f64>,
    /// Spearman of the same pooling; null when undefined.
    pub spearman: Option<f64>,
}

/// Computes the full paired-protocol summary.
pub fn evaluate_pairs(pairs: &[JudgmentPair]) -> Result<MetaEvalSummary> {
    let acc = accuracy(pairs)?;
    let tau = triplet_kendall_tau(pairs)?;
    let mut scores = Vec::with_capacity(pairs.len() * 2);
    let mut labels = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        scores.push(p.score_pos);
        labels.push(1.0);
        scores.push(p.score_neg);
        labels.push(0.0);
    }
    let pearson_r = match pearson(&scores, &labels) {
        Ok(v) => Some(v),
        Err(Error::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    let spearman_r = match spearman(&scores, &labels) {
        Ok(v) => Some(v),
        Err(Error::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    Ok(MetaEvalSummary {
        n: pairs.len(),
        accuracy: acc,
        kendall_tau: tau,
        pearson: pearson_r,
        spearman: spearman_r,
    })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-size statistics of a subset-level summary score.
#[derive(Debug, Clone, Serialize)]
pub struct SizeStats {
    pub size: usize,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Subsamples without replacement at each size, `repeats` times, and reports
/// the spread of `summarize` over the subsets.
///
/// Each (size, repeat) cell derives its own seed, so the sweep is
/// reproducible and cells can run in parallel.
pub fn stability_sweep<F>(
    n_total: usize,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
    summarize: F,
) -> Result<Vec<SizeStats>>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    if n_total == 0 || sizes.is_empty() || repeats == 0 {
        return Err(Error::EmptyInput("stability sweep over nothing".into()));
    }
    if let Some(bad) = sizes.iter().find(|s| **s == 0 || **s > n_total) {
        return Err(Error::InvalidParameter(format!(
            "subset size {bad} outside 1..={n_total}"
        )));
    }
    let cells: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|s| (0..repeats).map(move |r| (*s, r)))
        .collect();
    let results = par::map_slice(&cells, |(size, repeat)| {
        let cell_seed = derive_seed(seed, "stability", &[*size as u64, *repeat as u64]);
        let mut rng = rng_from_seed(cell_seed);
        // Subsets are sets: canonical (sorted) order, so the same subset
        // always summarizes to the same value.
        let mut subset = sample_without_replacement(&mut rng, n_total, *size);
        subset.sort_unstable();
        summarize(&subset)
    });
    let mut out = Vec::with_capacity(sizes.len());
    for (si, size) in sizes.iter().enumerate() {
        let mut values = Vec::with_capacity(repeats);
        for r in 0..repeats {
            match &results[si * repeats + r] {
                Ok(v) => values.push(*v),
                Err(e) => return Err(Error::Backend(format!("subset ({size},{r}): {e}"))),
            }
        }
        let (mean, std) = mean_std(&values);
        out.push(SizeStats { size: *size, mean, std, values });
    }
    Ok(out)
}

/// One rung of a disturbance-degree ladder, aggregated over repeated seeds.
#[derive(Debug, Clone, Serialize)]
pub struct LadderRung {
    pub degree: f64,
    /// Mean (over seeds) of the mean metric score on the noised side.
    pub mean_score: f64,
    pub std_score: f64,
    /// Mean triplet tau over seeds; null when undefined on every seed.
    pub kendall_tau: Option<f64>,
    pub kendall_tau_std: Option<f64>,
    pub accuracy: f64,
}

/// Runs the degree-ladder protocol: each degree is evaluated once per seed by
/// `eval(degree, seed) -> pairs`, and per-rung statistics aggregate over the
/// seeds.
pub fn noise_ladder<F>(degrees: &[f64], seeds: &[u64], eval: F) -> Result<Vec<LadderRung>>
where
    F: Fn(f64, u64) -> Result<Vec<JudgmentPair>> + Sync + Send,
{
    if degrees.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyInput("noise ladder without degrees or seeds".into()));
    }
    let cells: Vec<(f64, u64)> = degrees
        .iter()
        .flat_map(|d| seeds.iter().map(move |s| (*d, *s)))
        .collect();
    let results = par::map_slice(&cells, |(degree, seed)| eval(*degree, *seed));
    let mut rungs = Vec::with_capacity(degrees.len());
    for (di, degree) in degrees.iter().enumerate() {
        let mut noised_means = Vec::new();
        let mut taus = Vec::new();
        let mut accs = Vec::new();
        for si in 0..seeds.len() {
            let pairs = match &results[di * seeds.len() + si] {
                Ok(p) => p,
                Err(e) => return Err(Error::Backend(format!("degree {degree}: {e}"))),
            };
            if pairs.is_empty() {
                return Err(Error::EmptyInput(format!("degree {degree} produced no pairs")));
            }
            let mean_neg = pairs.iter().map(|p| p.score_neg).sum::<f64>() / pairs.len() as f64;
            noised_means.push(mean_neg);
            if let Some(tau) = triplet_kendall_tau(pairs)? {
                taus.push(tau);
            }
            accs.push(accuracy(pairs)?);
        }
        let (mean_score, std_score) = mean_std(&noised_means);
        let (acc_mean, _) = mean_std(&accs);
        let (tau_mean, tau_std) = if taus.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&taus);
            (Some(m), Some(s))
        };
        rungs.push(LadderRung {
            degree: *degree,
            mean_score,
            std_score,
            kendall_tau: tau_mean,
            kendall_tau_std: tau_std,
            accuracy: acc_mean,
        });
    }
    Ok(rungs)
}

/// Default disturbance ladders, heaviest rung matching the headline degrees.
pub fn default_ladder(kind: crate::perturb::DistortKind) -> Vec<f64> {
    use crate::perturb::DistortKind::*;
    match kind {
        Gn | GnPlus => vec![0.0125, 0.025, 0.05, 0.1, 0.2],
        Gb | GbPlus => vec![0.5, 1.0, 2.0, 4.0, 8.0],
        Spn | SpnPlus => vec![0.025, 0.05, 0.1, 0.2, 0.4],
        Mirror => vec![1.0, 2.0, 4.0, 8.0, 16.0],
    }
}

/// Default keyword-replacement ladder.
pub fn default_word_ladder() -> Vec<usize> {
    vec![0, 1, 2, 3, 4]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_of(scores: &[(f64, f64)]) -> Vec<JudgmentPair> {
        scores
            .iter()
            .enumerate()
            .map(|(i, (p, n))| JudgmentPair {
                id: format!("s{i}"),
                score_pos: *p,
                score_neg: *n,
            })
            .collect()
    }

    #[test]
    fn accuracy_counts_strict_wins() {
        let all_win = pairs_of(&[(2.0, 1.0), (5.0, 0.0)]);
        assert_eq!(accuracy(&all_win).unwrap(), 1.0);

        let all_tie = pairs_of(&[(1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(accuracy(&all_tie).unwrap(), 0.0);

        let seven_of_ten: Vec<(f64, f64)> = (0..10)
            .map(|i| if i < 7 { (1.0, 0.0) } else { (0.0, 1.0) })
            .collect();
        assert!((accuracy(&pairs_of(&seven_of_ten)).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn triplet_tau_matches_definition() {
        let all_win = pairs_of(&[(2.0, 1.0), (5.0, 0.0)]);
        assert_eq!(triplet_kendall_tau(&all_win).unwrap(), Some(1.0));

        let all_tie = pairs_of(&[(1.0, 1.0)]);
        assert_eq!(triplet_kendall_tau(&all_tie).unwrap(), None);

        let mixed = pairs_of(&[(2.0, 1.0), (0.0, 1.0), (3.0, 1.0), (4.0, 1.0)]);
        assert!((triplet_kendall_tau(&mixed).unwrap().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kendall_closed_forms() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((kendall_tau(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((kendall_tau(&a, &rev).unwrap() + 1.0).abs() < 1e-12);
        let b = [1.0, 3.0, 2.0, 4.0];
        assert!((kendall_tau(&a, &b).unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_antisymmetry_under_rank_reversal() {
        let a = [0.3, 1.2, -0.5, 2.0, 0.9];
        let b = [1.0, 0.2, 0.5, -0.1, 0.8];
        let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
        let t1 = kendall_tau(&a, &b).unwrap();
        let t2 = kendall_tau(&a, &neg_b).unwrap();
        assert!((t1 + t2).abs() < 1e-12);
    }

    #[test]
    fn pearson_closed_forms() {
        let a = [1.0, 2.0, 3.0];
        let affine: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&a, &affine).unwrap() - 1.0).abs() < 1e-12);

        let b = [3.0, 1.0, 2.0];
        assert!((pearson(&a, &b).unwrap() + 0.5).abs() < 1e-12);
        assert!((spearman(&a, &b).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_one_for_monotone_transforms() {
        let a = [0.1f64, 0.7, 1.3, 2.9, 5.0];
        let transformed: Vec<f64> = a.iter().map(|v| v.powi(3) + 2.0).collect();
        assert!((spearman(&a, &transformed).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_signaled() {
        let a = [1.0, 1.0, 1.0];
        let b = [1.0, 2.0, 3.0];
        assert!(matches!(pearson(&a, &b), Err(Error::ZeroVariance)));
        assert!(matches!(spearman(&a, &b), Err(Error::ZeroVariance)));
    }

    #[test]
    fn joint_permutation_leaves_statistics_unchanged() {
        let a = [0.5, 2.0, -1.0, 3.5, 0.0, 1.1];
        let b = [1.0, 0.3, 2.2, -0.4, 0.9, 1.8];
        let perm = [3, 0, 5, 1, 4, 2];
        let pa: Vec<f64> = perm.iter().map(|i| a[*i]).collect();
        let pb: Vec<f64> = perm.iter().map(|i| b[*i]).collect();
        assert!((kendall_tau(&a, &b).unwrap() - kendall_tau(&pa, &pb).unwrap()).abs() < 1e-12);
        assert!((pearson(&a, &b).unwrap() - pearson(&pa, &pb).unwrap()).abs() < 1e-12);
        assert!((spearman(&a, &b).unwrap() - spearman(&pa, &pb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_pairs_on_identical_inputs_reports_nulls() {
        // All scores equal: accuracy 0 by the tie rule, tau undefined, and
        // the pooled correlations have zero score variance.
        let pairs = pairs_of(&[(1.5, 1.5), (1.5, 1.5)]);
        let summary = evaluate_pairs(&pairs).unwrap();
        assert_eq!(summary.accuracy, 0.0);
        assert_eq!(summary.kendall_tau, None);
        assert_eq!(summary.pearson, None);
        assert_eq!(summary.spearman, None);

        // Two-level ties still have score variance; the pooled Pearson is
        // exactly zero because each pair is internally tied.
        let two_level = pairs_of(&[(1.5, 1.5), (2.0, 2.0)]);
        let summary = evaluate_pairs(&two_level).unwrap();
        assert_eq!(summary.accuracy, 0.0);
        assert_eq!(summary.kendall_tau, None);
        assert_eq!(summary.pearson, Some(0.0));
    }

    #[test]
    fn sweep_at_full_size_has_zero_spread() {
        let scores: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let stats = stability_sweep(40, &[40], 5, 7, |subset| {
            Ok(subset.iter().map(|i| scores[*i]).sum::<f64>() / subset.len() as f64)
        })
        .unwrap();
        assert_eq!(stats[0].std, 0.0);
    }

    #[test]
    fn constant_metric_is_flat_across_sizes() {
        let stats = stability_sweep(100, &[10, 50, 100], 4, 3, |_| Ok(42.0)).unwrap();
        for s in &stats {
            assert_eq!(s.mean, 42.0);
            assert_eq!(s.std, 0.0);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let scores: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).sin()).collect();
        let run = |seed| {
            stability_sweep(60, &[10, 30], 6, seed, |subset| {
                Ok(subset.iter().map(|i| scores[*i]).sum::<f64>() / subset.len() as f64)
            })
            .unwrap()
        };
        let a = run(5);
        let b = run(5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn ladder_reports_null_tau_on_all_ties() {
        let rungs = noise_ladder(&[0.0, 1.0], &[1, 2], |degree, seed| {
            let offset = if degree == 0.0 { 0.0 } else { 1.0 + seed as f64 * 0.01 };
            Ok((0..10)
                .map(|i| JudgmentPair {
                    id: format!("s{i}"),
                    score_pos: 5.0,
                    score_neg: 5.0 - offset,
                })
                .collect())
        })
        .unwrap();
        assert_eq!(rungs[0].kendall_tau, None);
        assert_eq!(rungs[1].kendall_tau, Some(1.0));
        assert!(rungs[1].mean_score < rungs[0].mean_score);
    }
}
