//! Per-code conditional log-likelihood estimation.
//!
//! A backend models P(next code | caption, code prefix) over a vocabulary of
//! K codes. Scoring a known grid needs no generation: every conditional is
//! available at once because the prefix at each position is given, which is
//! what [`score_teacher_forced`] exploits (positions evaluated independently,
//! in parallel). [`score_autoregressive_oracle`] walks the positions strictly
//! one at a time and must agree exactly; it exists as the slow reference.
//!
//! Probabilities below 1e-300 clamp to ln(1e-300) so maps never hold -inf.
//!
//! ## Count model file format ("LEICM1")
//!
//! Little-endian:
//!
//! ```text
//! magic        6 bytes "LEICM1"
//! k            u32
//! alpha        f64
//! has_cb_id    u8      1 if a codebook id follows
//! codebook_id  u64     (zero when has_cb_id = 0)
//! n_contexts   u64
//! contexts     repeated, sorted by (position, prev, bag):
//!   position   u32
//!   prev       u32     (= k encodes "start of sequence")
//!   bag        u64     caption bag-of-words hash
//!   total      u64
//!   n_entries  u32
//!   entries    repeated, sorted by code: code u32, count u64
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::caption::Caption;
use crate::error::{Error, Result};
use crate::par;
use crate::tokenizer::CodeGrid;

/// Probability floor; ln of anything smaller clamps to this.
pub fn log_floor() -> f64 {
    1e-300f64.ln()
}

fn clamped_ln(p: f64) -> f64 {
    p.max(1e-300).ln()
}

/// Per-position conditional log-likelihoods for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikMap {
    values: Vec<f64>,
    codebook_id: u64,
}

impl LogLikMap {
    pub fn new(values: Vec<f64>, codebook_id: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("log-likelihood map".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v > 0.0) {
            return Err(Error::InvalidParameter(
                "log-likelihoods must be finite and non-positive".into(),
            ));
        }
        Ok(Self { values, codebook_id })
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn codebook_id(&self) -> u64 {
        self.codebook_id
    }
}

/// Sum of the per-position log-likelihoods: ln P of the whole grid.
pub fn total_log_likelihood(map: &LogLikMap) -> f64 {
    map.values.iter().sum()
}

/// Contract for likelihood estimators.
///
/// `next_code_probs` must return K non-negative probabilities summing to 1
/// (within 1e-6) for every reachable state, and must be deterministic.
pub trait EstimatorBackend: Send + Sync {
    /// Vocabulary size K.
    fn vocab_size(&self) -> usize;

    /// Codebook this backend was trained against, if it is tied to one.
    fn codebook_id(&self) -> Option<u64> {
        None
    }

    /// Distribution over the next code given the caption and code prefix.
    fn next_code_probs(&self, cap: &Caption, prefix: &[u32]) -> Vec<f64>;

    /// ln P(code | caption, prefix); default goes through the full
    /// distribution. Backends may override with something cheaper.
    fn next_code_log_prob(&self, cap: &Caption, prefix: &[u32], code: u32) -> f64 {
        clamped_ln(self.next_code_probs(cap, prefix)[code as usize])
    }
}

fn check_compatibility(backend: &dyn EstimatorBackend, grid: &CodeGrid) -> Result<()> {
    if let Some(id) = backend.codebook_id() {
        if id != grid.codebook_id() {
            return Err(Error::CodebookMismatch { expected: id, got: grid.codebook_id() });
        }
    }
    let k = backend.vocab_size() as u32;
    if let Some(bad) = grid.codes().iter().find(|c| **c >= k) {
        return Err(Error::VocabularyMismatch(format!(
            "grid code {bad} outside backend vocabulary of {k}"
        )));
    }
    Ok(())
}

/// Scores every position of a known grid in one pass.
///
/// Equal to [`score_autoregressive_oracle`] by construction; positions are
/// independent given the (known) prefix, so they are evaluated in parallel.
pub fn score_teacher_forced(
    backend: &dyn EstimatorBackend,
    cap: &Caption,
    grid: &CodeGrid,
) -> Result<LogLikMap> {
    check_compatibility(backend, grid)?;
    let codes = grid.codes();
    let values = par::map_indexed(codes.len(), |t| {
        backend.next_code_log_prob(cap, &codes[..t], codes[t])
    });
    LogLikMap::new(values, grid.codebook_id())
}

/// Slow reference: walks the sequence strictly position by position.
pub fn score_autoregressive_oracle(
    backend: &dyn EstimatorBackend,
    cap: &Caption,
    grid: &CodeGrid,
) -> Result<LogLikMap> {
    check_compatibility(backend, grid)?;
    let codes = grid.codes();
    let mut values = Vec::with_capacity(codes.len());
    for t in 0..codes.len() {
        values.push(backend.next_code_log_prob(cap, &codes[..t], codes[t]));
    }
    LogLikMap::new(values, grid.codebook_id())
}

/// Assigns 1/K to every code regardless of state.
#[derive(Debug, Clone)]
pub struct UniformBackend {
    k: usize,
}

impl UniformBackend {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("vocabulary must be non-empty".into()));
        }
        Ok(Self { k })
    }
}

impl EstimatorBackend for UniformBackend {
    fn vocab_size(&self) -> usize {
        self.k
    }

    fn next_code_probs(&self, _cap: &Caption, _prefix: &[u32]) -> Vec<f64> {
        vec![1.0 / self.k as f64; self.k]
    }

    fn next_code_log_prob(&self, _cap: &Caption, _prefix: &[u32], _code: u32) -> f64 {
        -(self.k as f64).ln()
    }
}

/// Context key for the count model: flattened position, previous code
/// (`k` acts as the start-of-sequence marker), caption bag hash.
type ContextKey = (u32, u32, u64);

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    counts: BTreeMap<u32, u64>,
}

/// Additive-smoothed conditional frequency model.
///
/// Conditions on (position, previous code, caption bag of words); position is
/// the prefix length, so the conditioning stays within the backend contract.
/// P(c | ctx) = (count + α) / (total + α·K), which is exactly uniform for
/// unseen contexts when α > 0. With α = 0 an unseen context falls back to
/// uniform and a seen context uses the raw frequencies, so a corpus of a
/// single sequence is reproduced with probability one.
#[derive(Debug, Clone)]
pub struct CountModel {
    k: usize,
    alpha: f64,
    codebook_id: Option<u64>,
    contexts: BTreeMap<ContextKey, ContextCounts>,
}

impl CountModel {
    pub const DEFAULT_ALPHA: f64 = 0.1;

    /// Fits the model on (caption, grid) pairs. All grids must share one
    /// codebook.
    pub fn fit(corpus: &[(Caption, CodeGrid)], k: usize, alpha: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("count model corpus".into()));
        }
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha {alpha} must be >= 0")));
        }
        let codebook_id = corpus[0].1.codebook_id();
        let mut model = Self { k, alpha, codebook_id: Some(codebook_id), contexts: BTreeMap::new() };
        for (cap, grid) in corpus {
            model.observe(cap, grid)?;
        }
        Ok(model)
    }

    /// Adds one (caption, grid) pair to the counts.
    pub fn observe(&mut self, cap: &Caption, grid: &CodeGrid) -> Result<()> {
        if let Some(id) = self.codebook_id {
            if id != grid.codebook_id() {
                return Err(Error::CodebookMismatch { expected: id, got: grid.codebook_id() });
            }
        }
        let k = self.k as u32;
        if let Some(bad) = grid.codes().iter().find(|c| **c >= k) {
            return Err(Error::VocabularyMismatch(format!(
                "corpus code {bad} outside vocabulary of {k}"
            )));
        }
        let bag = cap.bag_hash();
        let mut prev = k; // start marker
        for (t, code) in grid.codes().iter().enumerate() {
            let entry = self.contexts.entry((t as u32, prev, bag)).or_default();
            entry.total += 1;
            *entry.counts.entry(*code).or_insert(0) += 1;
            prev = *code;
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn context_probs(&self, ctx: &ContextKey) -> Vec<f64> {
        let kf = self.k as f64;
        match self.contexts.get(ctx) {
            None => vec![1.0 / kf; self.k],
            Some(counts) => {
                if self.alpha == 0.0 && counts.total == 0 {
                    return vec![1.0 / kf; self.k];
                }
                let denom = counts.total as f64 + self.alpha * kf;
                let base = self.alpha / denom;
                let mut probs = vec![base; self.k];
                for (code, count) in &counts.counts {
                    probs[*code as usize] = (*count as f64 + self.alpha) / denom;
                }
                probs
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(COUNT_MODEL_MAGIC)?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&[self.codebook_id.is_some() as u8])?;
        w.write_all(&self.codebook_id.unwrap_or(0).to_le_bytes())?;
        w.write_all(&(self.contexts.len() as u64).to_le_bytes())?;
        for ((pos, prev, bag), counts) in &self.contexts {
            w.write_all(&pos.to_le_bytes())?;
            w.write_all(&prev.to_le_bytes())?;
            w.write_all(&bag.to_le_bytes())?;
            w.write_all(&counts.total.to_le_bytes())?;
            w.write_all(&(counts.counts.len() as u32).to_le_bytes())?;
            for (code, count) in &counts.counts {
                w.write_all(&code.to_le_bytes())?;
                w.write_all(&count.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != COUNT_MODEL_MAGIC {
            return Err(Error::Format(format!("bad count model magic {magic:?}")));
        }
        let k = read_u32(&mut r)? as usize;
        let alpha = read_f64(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let id = read_u64(&mut r)?;
        let codebook_id = (flag[0] == 1).then_some(id);
        let n_contexts = read_u64(&mut r)?;
        let mut contexts = BTreeMap::new();
        for _ in 0..n_contexts {
            let pos = read_u32(&mut r)?;
            let prev = read_u32(&mut r)?;
            let bag = read_u64(&mut r)?;
            let total = read_u64(&mut r)?;
            let n_entries = read_u32(&mut r)?;
            let mut counts = BTreeMap::new();
            let mut sum = 0u64;
            for _ in 0..n_entries {
                let code = read_u32(&mut r)?;
                let count = read_u64(&mut r)?;
                sum += count;
                counts.insert(code, count);
            }
            if sum != total {
                return Err(Error::Format(format!(
                    "context ({pos},{prev},{bag:#x}): entries sum {sum} != total {total}"
                )));
            }
            contexts.insert((pos, prev, bag), ContextCounts { total, counts });
        }
        if k == 0 {
            return Err(Error::Format("count model with empty vocabulary".into()));
        }
        Ok(Self { k, alpha, codebook_id, contexts })
    }
}

pub const COUNT_MODEL_MAGIC: &[u8; 6] = b"LEICM1";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_bits(u64::from_le_bytes(buf)))
}

impl EstimatorBackend for CountModel {
    fn vocab_size(&self) -> usize {
        self.k
    }

    fn codebook_id(&self) -> Option<u64> {
        self.codebook_id
    }

    fn next_code_probs(&self, cap: &Caption, prefix: &[u32]) -> Vec<f64> {
        let prev = prefix.last().copied().unwrap_or(self.k as u32);
        self.context_probs(&(prefix.len() as u32, prev, cap.bag_hash()))
    }

    fn next_code_log_prob(&self, cap: &Caption, prefix: &[u32], code: u32) -> f64 {
        let prev = prefix.last().copied().unwrap_or(self.k as u32);
        let ctx = (prefix.len() as u32, prev, cap.bag_hash());
        let kf = self.k as f64;
        match self.contexts.get(&ctx) {
            None => clamped_ln(1.0 / kf),
            Some(counts) => {
                if self.alpha == 0.0 && counts.total == 0 {
                    return clamped_ln(1.0 / kf);
                }
                let count = counts.counts.get(&code).copied().unwrap_or(0) as f64;
                clamped_ln((count + self.alpha) / (counts.total as f64 + self.alpha * kf))
            }
        }
    }
}
