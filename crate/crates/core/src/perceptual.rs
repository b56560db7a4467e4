//! Perceptual credit assignment.
//!
//! A code earns credit only when it is plausible twice over: its empirical
//! prior over real images must exceed e^λ, and its predicted conditional
//! likelihood must exceed e^λ. The credit for position t is
//!
//! ```text
//! h[t] = 1(ln prior[c_t] − λ > 0) · max(loglik[t] − λ, 0)
//! ```
//!
//! so a handful of extremely rare codes cannot drag a whole image down: they
//! contribute exactly zero instead of a huge negative term.
//!
//! ## Prior file format ("LEIPR1")
//!
//! Little-endian: magic 6 bytes, k u32, alpha f64, codebook_id u64,
//! source_count u64, then k probabilities as f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::LogLikMap;
use crate::tokenizer::CodeGrid;

pub const PRIOR_MAGIC: &[u8; 6] = b"LEIPR1";

/// Smoothed empirical distribution of code identities over a reference corpus.
#[derive(Debug, Clone)]
pub struct CodePrior {
    probs: Vec<f64>,
    source_count: u64,
    alpha: f64,
    codebook_id: u64,
}

impl CodePrior {
    /// Laplace smoothing default.
    pub const DEFAULT_ALPHA: f64 = 1.0;

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn source_count(&self) -> u64 {
        self.source_count
    }

    pub fn codebook_id(&self) -> u64 {
        self.codebook_id
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(PRIOR_MAGIC)?;
        w.write_all(&(self.probs.len() as u32).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&self.codebook_id.to_le_bytes())?;
        w.write_all(&self.source_count.to_le_bytes())?;
        for p in &self.probs {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != PRIOR_MAGIC {
            return Err(Error::Format(format!("bad prior magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let k = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let alpha = f64::from_bits(u64::from_le_bytes(b8));
        r.read_exact(&mut b8)?;
        let codebook_id = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let source_count = u64::from_le_bytes(b8);
        let mut probs = vec![0.0f64; k];
        for p in probs.iter_mut() {
            r.read_exact(&mut b8)?;
            *p = f64::from_bits(u64::from_le_bytes(b8));
        }
        let sum: f64 = probs.iter().sum();
        if k == 0 || probs.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Format(format!("prior does not normalize: sum {sum}")));
        }
        Ok(Self { probs, source_count, alpha, codebook_id })
    }
}

/// Estimates the code prior from reference grids with add-alpha smoothing.
pub fn estimate_prior(grids: &[CodeGrid], k: usize, alpha: f64) -> Result<CodePrior> {
    if grids.is_empty() {
        return Err(Error::EmptyInput("prior estimation needs at least one grid".into()));
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("prior alpha {alpha} must be >= 0")));
    }
    let codebook_id = grids[0].codebook_id();
    let mut counts = vec![0u64; k];
    let mut total = 0u64;
    for grid in grids {
        if grid.codebook_id() != codebook_id {
            return Err(Error::CodebookMismatch { expected: codebook_id, got: grid.codebook_id() });
        }
        for code in grid.codes() {
            let ix = *code as usize;
            if ix >= k {
                return Err(Error::VocabularyMismatch(format!("code {code} outside prior range {k}")));
            }
            counts[ix] += 1;
            total += 1;
        }
    }
    let denom = total as f64 + alpha * k as f64;
    let probs = counts.iter().map(|c| (*c as f64 + alpha) / denom).collect();
    Ok(CodePrior { probs, source_count: total, alpha, codebook_id })
}

/// Threshold configuration for the credit function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptualConfig {
    /// Log-space threshold λ; must be negative.
    pub lambda: f64,
}

impl PerceptualConfig {
    /// λ = ln 10⁻⁹.
    pub fn default_lambda() -> f64 {
        1e-9f64.ln()
    }
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self { lambda: Self::default_lambda() }
    }
}

impl PerceptualConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda >= 0.0 {
            return Err(Error::InvalidParameter(format!("lambda {} must be negative", self.lambda)));
        }
        Ok(())
    }
}

/// Applies the credit function position-wise. Outputs are non-negative.
pub fn apply_h(
    loglik: &LogLikMap,
    prior: &CodePrior,
    grid: &CodeGrid,
    cfg: &PerceptualConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if loglik.m() != grid.m() {
        return Err(Error::DimensionMismatch(format!(
            "loglik map of {} positions vs grid of {}",
            loglik.m(),
            grid.m()
        )));
    }
    if loglik.codebook_id() != grid.codebook_id() {
        return Err(Error::CodebookMismatch {
            expected: grid.codebook_id(),
            got: loglik.codebook_id(),
        });
    }
    if prior.codebook_id() != grid.codebook_id() {
        return Err(Error::CodebookMismatch {
            expected: grid.codebook_id(),
            got: prior.codebook_id(),
        });
    }
    let out = loglik
        .values()
        .iter()
        .zip(grid.codes())
        .map(|(ll, code)| credit_term(*ll, prior.probs()[*code as usize], cfg.lambda))
        .collect();
    Ok(out)
}

/// Single-position credit: indicator on the prior, shifted clamp on the
/// likelihood. The indicator is strict: exactly zero input gives zero credit.
pub fn credit_term(loglik: f64, prior_prob: f64, lambda: f64) -> f64 {
    let gate = prior_prob.max(1e-300).ln() - lambda > 0.0;
    if gate {
        (loglik - lambda).max(0.0)
    } else {
        0.0
    }
}
