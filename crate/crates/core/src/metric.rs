//! The final evaluation score and batch orchestration.
//!
//! One sample is scored as
//!
//! ```text
//! score = (1/m) Σ_t S[t] · H[t]
//! ```
//!
//! where H is the perceptual credit map and S the semantic score map.
//! Ablations: with `ablate_s` the semantic map is replaced by 1; with
//! `ablate_h` the credit term keeps the λ-shifted clamp but drops the prior
//! gate; with both, the score degenerates to the mean log-likelihood exactly.
//! The remaining sub-ablations of the credit term are exposed through
//! [`PerceptualMode`].

use serde::Serialize;

use crate::caption::Caption;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::likelihood::{score_teacher_forced, total_log_likelihood, EstimatorBackend, LogLikMap};
use crate::metaeval::mean_std;
use crate::par;
use crate::perceptual::{apply_h, CodePrior, PerceptualConfig};
use crate::semantic::{semantic_score, SemanticConfig, SemanticScorer};
use crate::tokenizer::{quantize, CodeGrid, Codebook, PatchEncoder};

/// Variants of the perceptual credit term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerceptualMode {
    /// 1(ln prior − λ > 0) · max(ln P − λ, 0)
    Full,
    /// max(ln P − λ, 0): prior gate dropped.
    NoPriorGate,
    /// 1(ln prior − λ > 0) · (ln P − λ): clamp dropped, may go negative.
    NoClamp,
    /// ln P untouched.
    Raw,
}

impl PerceptualMode {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "full" => Self::Full,
            "no-prior-gate" => Self::NoPriorGate,
            "no-clamp" => Self::NoClamp,
            "raw" => Self::Raw,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown h-mode {other:?} (expected full, no-prior-gate, no-clamp, raw)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoPriorGate => "no-prior-gate",
            Self::NoClamp => "no-clamp",
            Self::Raw => "raw",
        }
    }
}

/// Full metric configuration.
#[derive(Debug, Clone)]
pub struct LeicaConfig {
    pub perceptual: PerceptualConfig,
    pub semantic: SemanticConfig,
    /// Drop the perceptual credit function.
    pub ablate_h: bool,
    /// Drop the semantic score map (S ≡ 1).
    pub ablate_s: bool,
    /// Credit variant when `ablate_h` is off.
    pub h_mode: PerceptualMode,
}

impl Default for LeicaConfig {
    fn default() -> Self {
        Self {
            perceptual: PerceptualConfig::default(),
            semantic: SemanticConfig::default(),
            ablate_h: false,
            ablate_s: false,
            h_mode: PerceptualMode::Full,
        }
    }
}

impl LeicaConfig {
    /// The credit variant actually applied, after ablation flags.
    pub fn effective_mode(&self) -> PerceptualMode {
        match (self.ablate_h, self.ablate_s) {
            (true, true) => PerceptualMode::Raw,
            (true, false) => PerceptualMode::NoPriorGate,
            (false, _) => self.h_mode,
        }
    }
}

/// Borrowed bundle of everything needed to score samples.
#[derive(Clone, Copy)]
pub struct ScoringContext<'a> {
    pub encoder: &'a PatchEncoder,
    pub codebook: &'a Codebook,
    pub backend: &'a dyn EstimatorBackend,
    pub prior: &'a CodePrior,
    pub matcher: &'a dyn SemanticScorer,
}

impl<'a> From<&'a crate::synthworld::SynthOracles> for ScoringContext<'a> {
    fn from(oracles: &'a crate::synthworld::SynthOracles) -> Self {
        Self {
            encoder: &oracles.encoder,
            codebook: &oracles.codebook,
            backend: &oracles.estimator,
            prior: &oracles.prior,
            matcher: &oracles.matcher,
        }
    }
}

/// Per-position perceptual credit under a chosen mode.
pub fn credit_map(
    loglik: &LogLikMap,
    prior: &CodePrior,
    grid: &CodeGrid,
    cfg: &PerceptualConfig,
    mode: PerceptualMode,
) -> Result<Vec<f64>> {
    match mode {
        PerceptualMode::Full => apply_h(loglik, prior, grid, cfg),
        PerceptualMode::NoPriorGate => {
            cfg.validate()?;
            Ok(loglik.values().iter().map(|ll| (ll - cfg.lambda).max(0.0)).collect())
        }
        PerceptualMode::NoClamp => {
            cfg.validate()?;
            if loglik.m() != grid.m() {
                return Err(Error::DimensionMismatch(format!(
                    "loglik map of {} positions vs grid of {}",
                    loglik.m(),
                    grid.m()
                )));
            }
            Ok(loglik
                .values()
                .iter()
                .zip(grid.codes())
                .map(|(ll, code)| {
                    let gate = prior.probs()[*code as usize].max(1e-300).ln() - cfg.lambda > 0.0;
                    if gate {
                        ll - cfg.lambda
                    } else {
                        0.0
                    }
                })
                .collect())
        }
        PerceptualMode::Raw => Ok(loglik.values().to_vec()),
    }
}

/// One scored sample with its per-stage artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct SampleScore {
    pub id: String,
    pub leica: f64,
    pub total_loglik: f64,
    pub mean_loglik: f64,
    /// Positions whose credit is exactly zero under the effective mode.
    pub zeroed: usize,
    /// Global alignment; absent when the semantic stage is ablated.
    pub psi: Option<f64>,
}

/// Scores one (caption, image) pair through the whole pipeline.
pub fn leica_score(
    id: &str,
    cap: &Caption,
    img: &ImageTensor,
    ctx: &ScoringContext,
    cfg: &LeicaConfig,
) -> Result<SampleScore> {
    let features = ctx.encoder.encode(img)?;
    let grid = quantize(&features, ctx.codebook)?;
    let loglik = score_teacher_forced(ctx.backend, cap, &grid)?;
    let credit = credit_map(&loglik, ctx.prior, &grid, &cfg.perceptual, cfg.effective_mode())?;

    let m = grid.m() as f64;
    let (leica, psi) = if cfg.ablate_s {
        (credit.iter().sum::<f64>() / m, None)
    } else {
        let map = ctx.matcher.alignment(cap, img)?;
        let scores = semantic_score(&map, grid.h(), grid.w(), &cfg.semantic)?;
        let dot: f64 = scores.iter().zip(&credit).map(|(s, h)| s * h).sum();
        (dot / m, Some(map.psi()))
    };
    if !leica.is_finite() {
        return Err(Error::Backend(format!("sample {id}: non-finite score")));
    }
    let total = total_log_likelihood(&loglik);
    Ok(SampleScore {
        id: id.to_string(),
        leica,
        total_loglik: total,
        mean_loglik: total / m,
        zeroed: credit.iter().filter(|c| **c == 0.0).count(),
        psi,
    })
}

/// A sample that failed, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct SampleError {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub mean: f64,
    pub std: f64,
    pub scored: usize,
    pub failed: usize,
}

/// Batch result: successes in input order, failures listed, summary over
/// successes only.
#[derive(Debug, Clone, Serialize)]
pub struct BatchOutcome {
    pub summary: BatchSummary,
    pub scores: Vec<SampleScore>,
    pub errors: Vec<SampleError>,
}

/// Scores `ids.len()` samples, loading each through `load`.
///
/// Sample evaluations run in parallel; the outcome is identical for any
/// thread count because results are collected in input order and summarized
/// sequentially. Per-sample failures are collected, not fatal.
pub fn score_batch<F>(
    ids: &[String],
    load: F,
    ctx: &ScoringContext,
    cfg: &LeicaConfig,
) -> Result<BatchOutcome>
where
    F: Fn(usize) -> Result<(Caption, ImageTensor)> + Sync + Send,
{
    if ids.is_empty() {
        return Err(Error::EmptyInput("empty manifest".into()));
    }
    let results = par::map_indexed(ids.len(), |i| {
        load(i).and_then(|(cap, img)| leica_score(&ids[i], &cap, &img, ctx, cfg))
    });
    let mut scores = Vec::with_capacity(ids.len());
    let mut errors = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(score) => scores.push(score),
            Err(e) => errors.push(SampleError { id: ids[i].clone(), error: e.to_string() }),
        }
    }
    let values: Vec<f64> = scores.iter().map(|s| s.leica).collect();
    let (mean, std) = mean_std(&values);
    Ok(BatchOutcome {
        summary: BatchSummary { mean, std, scored: scores.len(), failed: errors.len() },
        scores,
        errors,
    })
}
