//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "leica",
    about = "Likelihood-based text-to-image evaluation with patch-level credit assignment",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Score a manifest of (caption, image) samples.
    Score(ScoreArgs),
    /// Compare clean samples against a perturbed variant and report judgment
    /// statistics (single degree or a full degree ladder).
    Metaeval(MetaevalArgs),
    /// Distort a single image file.
    Perturb(PerturbArgs),
    /// Rank several per-model manifests by their mean score.
    Rank(RankArgs),
    /// Build the synthetic world: images, manifest, and fitted model files.
    Synth(SynthArgs),
    /// Score-stability sweep over subset sizes.
    Stability(StabilityArgs),
    /// Serve a matcher file over newline-delimited JSON on stdio.
    MatcherServe(MatcherServeArgs),
}

/// Model files shared by the scoring commands.
#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Codebook file ("LEICB1").
    #[arg(long)]
    pub codebook: PathBuf,

    /// Likelihood backend: "count" (needs --estimator) or "uniform".
    #[arg(long, default_value = "count")]
    pub backend: String,

    /// Count-model file ("LEICM1"); required for the count backend.
    #[arg(long)]
    pub estimator: Option<PathBuf>,

    /// Code prior file ("LEIPR1").
    #[arg(long)]
    pub prior: PathBuf,

    /// Matcher file ("LEIMM1"); required unless --ablate-s or --matcher-cmd.
    #[arg(long)]
    pub matcher: Option<PathBuf>,

    /// External matcher command (newline-delimited JSON over stdio),
    /// e.g. --matcher-cmd "leica matcher-serve --matcher m.bin".
    #[arg(long)]
    pub matcher_cmd: Option<String>,

    /// Patch side length of the image tokenizer.
    #[arg(long, default_value_t = 16)]
    pub patch: usize,

    /// Seed of the deterministic patch-encoder weights.
    #[arg(long, default_value_t = leica_core::tokenizer::PatchEncoder::DEFAULT_SEED)]
    pub encoder_seed: u64,
}

/// Metric knobs shared by the scoring commands.
#[derive(Args, Clone)]
pub struct MetricArgs {
    /// Threshold λ: a negative value is read in log space ("-20.72"), a
    /// value in (0,1) as the probability e^λ ("1e-9").
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Temperature of the global semantic factor.
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,

    /// Drop the e^(psi/tau) factor from the semantic score.
    #[arg(long)]
    pub no_global: bool,

    /// Ablate the perceptual credit function.
    #[arg(long)]
    pub ablate_h: bool,

    /// Ablate the semantic score map.
    #[arg(long)]
    pub ablate_s: bool,

    /// Credit variant: full, no-prior-gate, no-clamp, raw.
    #[arg(long, default_value = "full")]
    pub h_mode: String,

    /// Resample phi as a 2-d grid ("2d", default) or a flat sequence ("1d").
    #[arg(long, default_value = "2d")]
    pub phi_resize: String,
}

/// Execution knobs shared by every command.
#[derive(Args, Clone)]
pub struct RunArgs {
    /// Worker threads (0 = all cores). Defaults to $LEICA_JOBS.
    #[arg(long)]
    pub jobs: Option<usize>,

    /// Base seed for every stochastic step.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ScoreArgs {
    /// JSONL manifest of samples to score.
    #[arg(long)]
    pub manifest: PathBuf,

    #[command(flatten)]
    pub models: ModelArgs,

    #[command(flatten)]
    pub metric: MetricArgs,

    #[command(flatten)]
    pub run: RunArgs,

    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Report format: json (full) or csv (id,score).
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Args)]
pub struct MetaevalArgs {
    /// Clean manifest.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Perturbation kind: gn, gb, spn, mirror, gn+, gb+, spn+, replace,
    /// mismatch. Ignored when --noised-manifest is given.
    #[arg(long)]
    pub kind: Option<String>,

    /// Distortion degree (image kinds) at which to evaluate.
    #[arg(long)]
    pub degree: Option<f64>,

    /// Keywords to replace (replace kind).
    #[arg(long)]
    pub k: Option<usize>,

    /// Keyword lexicon file, one word per line (replace kind).
    #[arg(long)]
    pub keywords: Option<PathBuf>,

    /// Replacement vocabulary file; defaults to the keyword lexicon.
    #[arg(long)]
    pub vocab: Option<PathBuf>,

    /// Pre-distorted manifest paired with the clean one by id.
    #[arg(long)]
    pub noised_manifest: Option<PathBuf>,

    /// Run a whole degree ladder (5 seeds per rung) instead of one degree.
    #[arg(long)]
    pub ladder: bool,

    /// Explicit ladder degrees, comma-separated; defaults per kind.
    #[arg(long)]
    pub degrees: Option<String>,

    #[command(flatten)]
    pub models: ModelArgs,

    #[command(flatten)]
    pub metric: MetricArgs,

    #[command(flatten)]
    pub run: RunArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also write per-pair scores as CSV here.
    #[arg(long)]
    pub pairs_csv: Option<PathBuf>,

    /// Write a gnuplot-ready TSV of the ladder curves here.
    #[arg(long)]
    pub curves_tsv: Option<PathBuf>,
}

#[derive(Args)]
pub struct PerturbArgs {
    /// Distortion kind: gn, gb, spn, mirror, gn+, gb+, spn+.
    #[arg(long)]
    pub kind: String,

    #[arg(long)]
    pub degree: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Input PPM.
    #[arg(long = "in")]
    pub input: PathBuf,

    /// Output PPM.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RankArgs {
    /// Per-model manifests (repeatable).
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,

    #[command(flatten)]
    pub models: ModelArgs,

    #[command(flatten)]
    pub metric: MetricArgs,

    #[command(flatten)]
    pub run: RunArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 256)]
    pub image_size: usize,

    #[arg(long, default_value_t = 16)]
    pub patch: usize,

    #[arg(long, default_value_t = 32)]
    pub dim: usize,

    #[arg(long, default_value_t = 512)]
    pub codebook_size: usize,

    /// Jittered copies of each scene in the fitting corpus.
    #[arg(long, default_value_t = 4)]
    pub jitter_seeds: u64,

    /// Count-model smoothing.
    #[arg(long, default_value_t = 0.1)]
    pub estimator_alpha: f64,

    /// Prior smoothing.
    #[arg(long, default_value_t = 1.0)]
    pub prior_alpha: f64,

    /// Worker threads (0 = all cores). Defaults to $LEICA_JOBS.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Subset sizes, comma-separated (e.g. "100,500,1000").
    #[arg(long)]
    pub sizes: String,

    #[arg(long, default_value_t = 10)]
    pub repeats: usize,

    #[command(flatten)]
    pub models: ModelArgs,

    #[command(flatten)]
    pub metric: MetricArgs,

    #[command(flatten)]
    pub run: RunArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Write per-size rows as TSV here.
    #[arg(long)]
    pub curves_tsv: Option<PathBuf>,
}

#[derive(Args)]
pub struct MatcherServeArgs {
    /// Matcher file ("LEIMM1") to serve.
    #[arg(long)]
    pub matcher: PathBuf,
}
