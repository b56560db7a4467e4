//! Seeded, portable randomness.
//!
//! Every stochastic step in the crate draws from ChaCha12 seeded through
//! [`rng_from_seed`] or a seed derived with [`derive_seed`]. ChaCha12 has a
//! published specification and a stable stream for a given seed, so any two
//! builds (or reimplementations) produce identical outputs. Gaussian samples
//! come from an explicit Box-Muller transform rather than a library sampler
//! so the byte-level stream is pinned by this file alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type PortableRng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> PortableRng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a labelled sub-task of a seeded run.
///
/// SHA-256 over (base seed, label, indices) folded to 64 bits. Collisions
/// between distinct (label, index) tuples are negligible, and the derivation
/// is order-free so parallel workers can seed themselves.
pub fn derive_seed(base: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(label.as_bytes());
    for ix in indices {
        hasher.update([0x1f]);
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Standard normal via Box-Muller on two uniform draws.
///
/// Draws exactly two `f64` from the stream per call. The first uniform is
/// mapped away from zero so the log is finite.
pub fn sample_standard_normal(rng: &mut PortableRng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Samples `k` distinct indices from `0..n` by partial Fisher-Yates.
///
/// The result is in selection order, not sorted.
pub fn sample_without_replacement(rng: &mut PortableRng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} items from {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Stable 64-bit content hash (SHA-256 prefix, little-endian).
pub fn content_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable_and_label_sensitive() {
        let a = derive_seed(7, "noise", &[1, 2]);
        let b = derive_seed(7, "noise", &[1, 2]);
        let c = derive_seed(7, "noise", &[2, 1]);
        let d = derive_seed(7, "subset", &[1, 2]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn normal_samples_have_plausible_moments() {
        let mut rng = rng_from_seed(11);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| sample_standard_normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn sampling_without_replacement_is_distinct_and_deterministic() {
        let mut rng = rng_from_seed(3);
        let picked = sample_without_replacement(&mut rng, 50, 20);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);

        let mut rng2 = rng_from_seed(3);
        assert_eq!(picked, sample_without_replacement(&mut rng2, 50, 20));
    }
}
