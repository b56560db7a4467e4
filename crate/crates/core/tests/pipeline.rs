//! Cross-module integration checks: shared indexing conventions, the
//! teacher-forced/autoregressive equivalence, and statistics against
//! brute-force references.

use leica_core::caption::Caption;
use leica_core::likelihood::{
    score_autoregressive_oracle, score_teacher_forced, CountModel, EstimatorBackend, UniformBackend,
};
use leica_core::metaeval::{average_ranks, kendall_tau, pearson, spearman};
use leica_core::perceptual::{estimate_prior, PerceptualConfig};
use leica_core::rng::{rng_from_seed, sample_standard_normal};
use leica_core::tokenizer::{quantize, CodeGrid, Codebook, FeatureGrid, PatchEncoder};
use leica_core::ImageTensor;
use proptest::prelude::*;
use rand::Rng;

/// Position t of the flattened likelihood map must address grid cell
/// (t / w, t % w) — the tokenizer and the likelihood stage have to agree.
#[test]
fn row_major_flattening_is_shared_between_tokenizer_and_likelihood() {
    // A backend whose log-prob depends only on the code value lets us read
    // the grid back out of the likelihood map.
    struct CodeEcho {
        k: usize,
    }
    impl EstimatorBackend for CodeEcho {
        fn vocab_size(&self) -> usize {
            self.k
        }
        fn next_code_probs(&self, _cap: &Caption, _prefix: &[u32]) -> Vec<f64> {
            vec![1.0 / self.k as f64; self.k]
        }
        fn next_code_log_prob(&self, _cap: &Caption, _prefix: &[u32], code: u32) -> f64 {
            -((code + 1) as f64)
        }
    }

    // Image whose patches quantize to a known pattern: patch (r, c) is filled
    // with intensity keyed by (r * w + c) % k.
    let patch = 4usize;
    let (h, w) = (3usize, 5usize);
    let k = 7usize;
    let img = ImageTensor::from_fn(h * patch, w * patch, |y, x| {
        let cell = (y / patch) * w + (x / patch);
        let v = (cell % k) as f32 / k as f32;
        [v, v, v]
    })
    .unwrap();
    let enc = PatchEncoder::seeded(patch, 6, 1).unwrap();
    let features = enc.encode(&img).unwrap();

    // Codebook rows at the feature of each distinct intensity, in order.
    let mut rows = Vec::new();
    for code in 0..k {
        let v = code as f32 / k as f32;
        let block = ImageTensor::filled(patch, patch, [v, v, v]).unwrap();
        let f = enc.encode(&block).unwrap();
        rows.extend_from_slice(f.cell(0));
    }
    let cb = Codebook::new(6, rows).unwrap();
    let grid = quantize(&features, &cb).unwrap();
    assert_eq!((grid.h(), grid.w()), (h, w));
    assert_eq!(grid.m(), h * w);
    for (t, code) in grid.codes().iter().enumerate() {
        assert_eq!(*code as usize, t % k, "cell {t}");
    }

    let cap = Caption::parse("marker").unwrap();
    let map = score_teacher_forced(&CodeEcho { k }, &cap, &grid).unwrap();
    for t in 0..grid.m() {
        let expected = -((grid.codes()[t] + 1) as f64);
        assert_eq!(map.values()[t], expected, "position {t}");
    }
}

fn random_corpus(
    seed: u64,
    k: usize,
    grids: usize,
    m: usize,
) -> (Vec<Caption>, Vec<(Caption, CodeGrid)>) {
    let mut rng = rng_from_seed(seed);
    let words = ["red", "blue", "square", "circle", "top", "bottom", "cat", "dog"];
    let captions: Vec<Caption> = (0..4)
        .map(|i| {
            let n = 2 + (i % 3);
            let text: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
            Caption::parse(&text.join(" ")).unwrap()
        })
        .collect();
    let corpus = (0..grids)
        .map(|_| {
            let cap = captions[rng.gen_range(0..captions.len())].clone();
            let codes: Vec<u32> = (0..m).map(|_| rng.gen_range(0..k) as u32).collect();
            (cap, CodeGrid::new(1, m, codes, 77).unwrap())
        })
        .collect();
    (captions, corpus)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn teacher_forced_matches_autoregressive(seed in 0u64..1000, k in 2usize..24, m in 1usize..20) {
        let (captions, corpus) = random_corpus(seed, k, 6, m.max(2));
        let model = CountModel::fit(&corpus, k, 0.1).unwrap();
        let mut rng = rng_from_seed(seed ^ 0xabcd);
        let cap = &captions[rng.gen_range(0..captions.len())];
        let codes: Vec<u32> = (0..m).map(|_| rng.gen_range(0..k) as u32).collect();
        let grid = CodeGrid::new(1, m, codes, 77).unwrap();
        let fast = score_teacher_forced(&model, cap, &grid).unwrap();
        let slow = score_autoregressive_oracle(&model, cap, &grid).unwrap();
        for (a, b) in fast.values().iter().zip(slow.values()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn backend_distributions_normalize(seed in 0u64..1000, k in 2usize..32) {
        let (captions, corpus) = random_corpus(seed, k, 5, 6);
        let backends: Vec<Box<dyn EstimatorBackend>> = vec![
            Box::new(UniformBackend::new(k).unwrap()),
            Box::new(CountModel::fit(&corpus, k, 0.1).unwrap()),
            Box::new(CountModel::fit(&corpus, k, 0.0).unwrap()),
        ];
        let mut rng = rng_from_seed(seed ^ 0x1234);
        for backend in &backends {
            let cap = &captions[rng.gen_range(0..captions.len())];
            let len = rng.gen_range(0..6);
            let prefix: Vec<u32> = (0..len).map(|_| rng.gen_range(0..k) as u32).collect();
            let probs = backend.next_code_probs(cap, &prefix);
            let sum: f64 = probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
            prop_assert!(probs.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn quantize_agrees_with_brute_force(seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let dim = 5usize;
        let k = 12usize;
        let vectors: Vec<f32> = (0..k * dim).map(|_| sample_standard_normal(&mut rng) as f32).collect();
        let cb = Codebook::new(dim, vectors).unwrap();
        let feats: Vec<f32> = (0..6 * dim).map(|_| sample_standard_normal(&mut rng) as f32).collect();
        let grid = quantize(&FeatureGrid::new(2, 3, dim, feats.clone()).unwrap(), &cb).unwrap();
        for t in 0..6 {
            let cell = &feats[t * dim..(t + 1) * dim];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d: f64 = cell.iter().zip(cb.row(c)).map(|(a, b)| ((*a - *b) as f64).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            prop_assert_eq!(grid.codes()[t], best as u32);
        }
    }

    #[test]
    fn credit_outputs_are_nonnegative(values in prop::collection::vec(-40.0f64..0.0, 1..30)) {
        let m = values.len();
        let map = leica_core::likelihood::LogLikMap::new(values, 5).unwrap();
        let grid = CodeGrid::new(1, m, vec![0; m], 5).unwrap();
        let prior = estimate_prior(&[grid.clone()], 2, 1.0).unwrap();
        let credit = leica_core::perceptual::apply_h(&map, &prior, &grid, &PerceptualConfig::default()).unwrap();
        prop_assert!(credit.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn statistics_match_brute_force(seed in 0u64..2000, n in 2usize..50) {
        let mut rng = rng_from_seed(seed);
        let a: Vec<f64> = (0..n).map(|_| sample_standard_normal(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| sample_standard_normal(&mut rng)).collect();

        prop_assert!((kendall_tau(&a, &b).unwrap() - brute_force_tau(&a, &b)).abs() < 1e-12);
        prop_assert!((pearson(&a, &b).unwrap() - brute_force_pearson(&a, &b)).abs() < 1e-12);
        prop_assert!((spearman(&a, &b).unwrap() - brute_force_spearman(&a, &b)).abs() < 1e-12);
    }
}

/// Pair-enumeration reference for tau-a.
fn brute_force_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let da = a[j] - a[i];
            let db = b[j] - b[i];
            if da * db > 0.0 {
                concordant += 1;
            } else if da * db < 0.0 {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64
}

/// Definition-following reference for Pearson's r.
fn brute_force_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let da: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>().sqrt();
    let db: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>().sqrt();
    num / (da * db)
}

/// Rank-by-counting reference for Spearman's rho.
fn brute_force_spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let below = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    brute_force_pearson(&rank(a), &rank(b))
}

#[test]
fn average_ranks_handle_ties() {
    let ranks = average_ranks(&[10.0, 20.0, 20.0, 5.0]);
    assert_eq!(ranks, vec![2.0, 3.5, 3.5, 1.0]);
}

/// The count-model corpus (caption, grid) pairing survives a save/load and
/// still scores identically inside the full pipeline path.
#[test]
fn persisted_estimator_is_equivalent() {
    let (captions, corpus) = random_corpus(11, 9, 8, 10);
    let model = CountModel::fit(&corpus, 9, 0.1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("estimator.bin");
    model.write(&path).unwrap();
    let loaded = CountModel::read(&path).unwrap();

    let mut rng = rng_from_seed(42);
    for _ in 0..20 {
        let cap = &captions[rng.gen_range(0..captions.len())];
        let codes: Vec<u32> = (0..10).map(|_| rng.gen_range(0..9) as u32).collect();
        let grid = CodeGrid::new(2, 5, codes, 77).unwrap();
        let a = score_teacher_forced(&model, cap, &grid).unwrap();
        let b = score_teacher_forced(&loaded, cap, &grid).unwrap();
        assert_eq!(a.values(), b.values());
    }
}
