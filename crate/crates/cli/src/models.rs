//! Loading and validating the model bundle referenced by the CLI flags.

use serde::Serialize;

use leica_core::likelihood::{CountModel, EstimatorBackend, UniformBackend};
use leica_core::metric::{LeicaConfig, PerceptualMode, ScoringContext};
use leica_core::perceptual::{CodePrior, PerceptualConfig};
use leica_core::semantic::{
    LinearMatcher, PhiResize, SemanticConfig, SemanticScorer, StdioMatcher,
};
use leica_core::tokenizer::{Codebook, PatchEncoder};

use crate::args::{MetricArgs, ModelArgs};
use crate::errors::{config_error, CliResult, ErrorContext};

/// Owned model bundle; hand out a [`ScoringContext`] view for scoring.
pub struct LoadedModels {
    pub encoder: PatchEncoder,
    pub codebook: Codebook,
    pub backend: Box<dyn EstimatorBackend>,
    pub prior: CodePrior,
    pub matcher: Option<Box<dyn SemanticScorer>>,
}

impl LoadedModels {
    pub fn context(&self) -> ScoringContext<'_> {
        ScoringContext {
            encoder: &self.encoder,
            codebook: &self.codebook,
            backend: self.backend.as_ref(),
            prior: &self.prior,
            matcher: self.matcher.as_deref().unwrap_or(&NoMatcher),
        }
    }
}

/// Placeholder for ablate-s runs; scoring never calls it.
struct NoMatcher;

impl SemanticScorer for NoMatcher {
    fn alignment(
        &self,
        _cap: &leica_core::Caption,
        _img: &leica_core::ImageTensor,
    ) -> leica_core::Result<leica_core::semantic::SemanticMap> {
        Err(leica_core::Error::Backend(
            "no matcher configured (pass --matcher or --matcher-cmd, or use --ablate-s)".into(),
        ))
    }
}

pub fn load_models(args: &ModelArgs, need_matcher: bool) -> CliResult<LoadedModels> {
    let codebook = Codebook::read(&args.codebook).or_config("reading codebook")?;
    let encoder = PatchEncoder::seeded(args.patch, codebook.dim(), args.encoder_seed)
        .or_config("building patch encoder")?;

    let backend: Box<dyn EstimatorBackend> = match args.backend.as_str() {
        "uniform" => Box::new(UniformBackend::new(codebook.k()).or_config("uniform backend")?),
        "count" => {
            let path = args.estimator.as_ref().ok_or_else(|| {
                config_error("the count backend needs --estimator <FILE>")
            })?;
            let model = CountModel::read(path).or_config("reading estimator")?;
            if model.vocab_size() != codebook.k() {
                return Err(config_error(format!(
                    "estimator vocabulary {} does not match codebook size {}",
                    model.vocab_size(),
                    codebook.k()
                )));
            }
            Box::new(model)
        }
        other => {
            return Err(config_error(format!(
                "unknown backend {other:?} (expected count or uniform)"
            )))
        }
    };

    let prior = CodePrior::read(&args.prior).or_config("reading prior")?;
    if prior.k() != codebook.k() {
        return Err(config_error(format!(
            "prior over {} codes does not match codebook size {}",
            prior.k(),
            codebook.k()
        )));
    }
    if prior.codebook_id() != codebook.id() {
        return Err(config_error(format!(
            "prior codebook id {:#018x} does not match codebook {:#018x}",
            prior.codebook_id(),
            codebook.id()
        )));
    }

    let matcher: Option<Box<dyn SemanticScorer>> = match (&args.matcher, &args.matcher_cmd) {
        (_, Some(cmd)) => {
            let parts: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if parts.is_empty() {
                return Err(config_error("--matcher-cmd is empty"));
            }
            Some(Box::new(
                StdioMatcher::spawn(&parts[0], &parts[1..]).or_config("spawning matcher command")?,
            ))
        }
        (Some(path), None) => {
            Some(Box::new(LinearMatcher::read(path).or_config("reading matcher")?))
        }
        (None, None) => None,
    };
    if need_matcher && matcher.is_none() {
        return Err(config_error(
            "a matcher is required: pass --matcher or --matcher-cmd (or --ablate-s)",
        ));
    }

    Ok(LoadedModels { encoder, codebook, backend, prior, matcher })
}

/// λ flag semantics: negative = log space, (0,1) = probability.
pub fn parse_lambda(value: f64) -> CliResult<f64> {
    if !value.is_finite() {
        return Err(config_error(format!("lambda {value} is not finite")));
    }
    if value < 0.0 {
        Ok(value)
    } else if value > 0.0 && value < 1.0 {
        Ok(value.ln())
    } else {
        Err(config_error(format!(
            "lambda {value} must be negative (log space) or inside (0,1) (probability)"
        )))
    }
}

pub fn metric_config(args: &MetricArgs) -> CliResult<LeicaConfig> {
    let lambda = match args.lambda {
        Some(v) => parse_lambda(v)?,
        None => PerceptualConfig::default_lambda(),
    };
    let phi_resize = match args.phi_resize.as_str() {
        "2d" => PhiResize::TwoD,
        "1d" => PhiResize::OneD,
        other => return Err(config_error(format!("unknown --phi-resize {other:?}"))),
    };
    if !(args.tau > 0.0) {
        return Err(config_error(format!("tau {} must be positive", args.tau)));
    }
    Ok(LeicaConfig {
        perceptual: PerceptualConfig { lambda },
        semantic: SemanticConfig {
            tau: args.tau,
            use_global: !args.no_global,
            phi_resize,
        },
        ablate_h: args.ablate_h,
        ablate_s: args.ablate_s,
        h_mode: PerceptualMode::parse(&args.h_mode).or_config("--h-mode")?,
    })
}

/// Everything reports echo so a run can be reproduced from its output.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub manifest: Option<String>,
    pub codebook: String,
    pub backend: String,
    pub estimator: Option<String>,
    pub prior: String,
    pub matcher: Option<String>,
    pub matcher_cmd: Option<String>,
    pub patch: usize,
    pub encoder_seed: u64,
    pub lambda: f64,
    pub tau: f64,
    pub use_global: bool,
    pub ablate_h: bool,
    pub ablate_s: bool,
    pub h_mode: String,
    pub phi_resize: String,
    pub seed: u64,
    pub jobs: Option<usize>,
}

pub fn config_echo(
    manifest: Option<&std::path::Path>,
    models: &ModelArgs,
    cfg: &LeicaConfig,
    seed: u64,
    jobs: Option<usize>,
) -> ConfigEcho {
    ConfigEcho {
        manifest: manifest.map(|p| p.display().to_string()),
        codebook: models.codebook.display().to_string(),
        backend: models.backend.clone(),
        estimator: models.estimator.as_ref().map(|p| p.display().to_string()),
        prior: models.prior.display().to_string(),
        matcher: models.matcher.as_ref().map(|p| p.display().to_string()),
        matcher_cmd: models.matcher_cmd.clone(),
        patch: models.patch,
        encoder_seed: models.encoder_seed,
        lambda: cfg.perceptual.lambda,
        tau: cfg.semantic.tau,
        use_global: cfg.semantic.use_global,
        ablate_h: cfg.ablate_h,
        ablate_s: cfg.ablate_s,
        h_mode: cfg.h_mode.name().to_string(),
        phi_resize: match cfg.semantic.phi_resize {
            PhiResize::TwoD => "2d".to_string(),
            PhiResize::OneD => "1d".to_string(),
        },
        seed,
        jobs,
    }
}
