//! Command implementations.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use leica_core::caption::Caption;
use leica_core::image::ImageTensor;
use leica_core::manifest::{read_manifest, write_manifest, ManifestEntry};
use leica_core::metaeval::{
    default_ladder, default_word_ladder, evaluate_pairs, noise_ladder, stability_sweep,
    JudgmentPair,
};
use leica_core::metric::{score_batch, LeicaConfig, SampleError, ScoringContext};
use leica_core::perturb::{
    build_triplets, distort_image, perturb_text, DistortKind, DistortionSpec, TextPerturbKind,
    TextPerturbSpec,
};
use leica_core::rng::derive_seed;
use leica_core::semantic::patch_alignment;
use leica_core::synthworld::{build_oracles, generate, keyword_lexicon, SynthConfig};
use leica_core::Result as CoreResult;

use crate::args::*;
use crate::errors::*;
use crate::models::{config_echo, load_models, metric_config};
use crate::reports::*;

/// Applies --jobs / $LEICA_JOBS to the global worker pool.
pub fn init_jobs(jobs: Option<usize>) -> Option<usize> {
    let jobs = jobs.or_else(|| {
        std::env::var("LEICA_JOBS").ok().and_then(|v| v.parse().ok())
    });
    #[cfg(feature = "parallel")]
    if let Some(n) = jobs {
        if n > 0 {
            // Only the first initialization wins; later calls are no-ops.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    jobs
}

fn parse_text(entry: &ManifestEntry) -> CoreResult<Caption> {
    Caption::parse(&entry.text)
}

fn load_entry(entry: &ManifestEntry, manifest: &Path) -> CoreResult<(Caption, ImageTensor)> {
    let cap = parse_text(entry)?;
    let img = ImageTensor::read_ppm(&entry.image_path(manifest))?;
    Ok((cap, img))
}

fn read_entries(path: &Path) -> CliResult<Vec<ManifestEntry>> {
    read_manifest(path).or_data("reading manifest")
}

fn ids_of(entries: &[ManifestEntry]) -> Vec<String> {
    entries.iter().map(|e| e.id.clone()).collect()
}

// ---------------------------------------------------------------------------
// score

pub fn cmd_score(args: &ScoreArgs) -> CliResult<()> {
    let jobs = init_jobs(args.run.jobs);
    let cfg = metric_config(&args.metric)?;
    let models = load_models(&args.models, !args.metric.ablate_s)?;
    let entries = read_entries(&args.manifest)?;
    let ids = ids_of(&entries);
    let ctx = models.context();
    let outcome = score_batch(&ids, |i| load_entry(&entries[i], &args.manifest), &ctx, &cfg)
        .or_data("scoring batch")?;

    let echo = config_echo(Some(&args.manifest), &args.models, &cfg, args.run.seed, jobs);
    match args.format.as_str() {
        "json" => {
            let report = ScoreReport {
                schema: SCORE_SCHEMA,
                command: "score",
                config: &echo,
                summary: &outcome.summary,
                samples: &outcome.scores,
                errors: &outcome.errors,
            };
            emit(args.out.as_deref(), &to_json(&report)?)
        }
        "csv" => emit(args.out.as_deref(), &scores_csv(&outcome.scores)),
        other => Err(config_error(format!("unknown --format {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// perturb

pub fn cmd_perturb(args: &PerturbArgs) -> CliResult<()> {
    let kind = DistortKind::parse(&args.kind).or_config("--kind")?;
    let spec = DistortionSpec { kind, degree: args.degree, seed: args.seed };
    spec.validate().or_config("--degree")?;
    let img = ImageTensor::read_ppm(&args.input).or_data("reading input image")?;
    let out = distort_image(&img, &spec).or_data("distorting image")?;
    out.write_ppm(&args.out).or_data("writing output image")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Serialize)]
struct WorldManifest {
    schema: &'static str,
    image_size: usize,
    patch: usize,
    dim: usize,
    /// Requested codebook size; the fitted size is in the codebook file.
    codebook_size: usize,
    fitted_codebook_size: usize,
    jitter_seeds: u64,
    encoder_seed: u64,
    estimator_alpha: f64,
    prior_alpha: f64,
    seed: u64,
    scenes: usize,
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    init_jobs(args.jobs);
    let cfg = SynthConfig {
        image_size: args.image_size,
        patch: args.patch,
        dim: args.dim,
        codebook_size: args.codebook_size,
        jitter_seeds: args.jitter_seeds,
        estimator_alpha: args.estimator_alpha,
        prior_alpha: args.prior_alpha,
        base_seed: args.seed,
        ..SynthConfig::default()
    };
    if cfg.image_size % cfg.patch != 0 {
        return Err(config_error(format!(
            "image size {} not divisible by patch {}",
            cfg.image_size, cfg.patch
        )));
    }
    let oracles = build_oracles(&cfg).or_config("fitting synthetic world")?;

    let out = &args.out;
    std::fs::create_dir_all(out.join("images")).or_data("creating output directory")?;
    let specs = cfg.corpus_specs();
    let mut entries = Vec::with_capacity(specs.len());
    for spec in &specs {
        let (caption, img) = generate(spec, cfg.image_size).or_internal("rendering scene")?;
        let id = spec.sample_id();
        let rel = format!("images/{id}.ppm");
        img.write_ppm(&out.join(&rel)).or_data("writing scene image")?;
        entries.push(ManifestEntry {
            id,
            text: caption.raw().to_string(),
            image: rel,
            model: Some("synthworld".to_string()),
            tags: None,
        });
    }
    write_manifest(&out.join("manifest.jsonl"), &entries).or_data("writing manifest")?;

    oracles.codebook.write(&out.join("codebook.bin")).or_data("writing codebook")?;
    oracles.estimator.write(&out.join("estimator.bin")).or_data("writing estimator")?;
    oracles.prior.write(&out.join("prior.bin")).or_data("writing prior")?;
    oracles.matcher.write(&out.join("matcher.bin")).or_data("writing matcher")?;

    let lexicon = keyword_lexicon().join("\n") + "\n";
    std::fs::write(out.join("keywords.txt"), lexicon).or_data("writing keyword lexicon")?;

    let world = WorldManifest {
        schema: WORLD_SCHEMA,
        image_size: cfg.image_size,
        patch: cfg.patch,
        dim: cfg.dim,
        codebook_size: cfg.codebook_size,
        fitted_codebook_size: oracles.codebook.k(),
        jitter_seeds: cfg.jitter_seeds,
        encoder_seed: cfg.encoder_seed,
        estimator_alpha: cfg.estimator_alpha,
        prior_alpha: cfg.prior_alpha,
        seed: cfg.base_seed,
        scenes: specs.len(),
    };
    emit(Some(&out.join("world.json")), &to_json(&world)?)?;
    eprintln!(
        "synthetic world written to {}: {} scenes, codebook of {} codes",
        out.display(),
        specs.len(),
        oracles.codebook.k()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// metaeval

enum PerturbMode {
    Image(DistortKind),
    Replace { keywords: Vec<String>, vocab: Vec<String> },
    Mismatch,
    Paired(Vec<ManifestEntry>, PathBuf),
}

impl PerturbMode {
    fn name(&self) -> String {
        match self {
            PerturbMode::Image(kind) => kind.name().to_string(),
            PerturbMode::Replace { .. } => "replace".to_string(),
            PerturbMode::Mismatch => "mismatch".to_string(),
            PerturbMode::Paired(..) => "paired".to_string(),
        }
    }
}

fn read_word_list(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .or_config(&format!("reading word list {}", path.display()))?;
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect();
    if words.is_empty() {
        return Err(config_error(format!("word list {} is empty", path.display())));
    }
    Ok(words)
}

fn metaeval_mode(args: &MetaevalArgs) -> CliResult<PerturbMode> {
    if let Some(noised) = &args.noised_manifest {
        let entries = read_entries(noised)?;
        return Ok(PerturbMode::Paired(entries, noised.clone()));
    }
    let kind = args
        .kind
        .as_deref()
        .ok_or_else(|| config_error("pass --kind or --noised-manifest"))?;
    match kind {
        "replace" => {
            let keywords_path = args
                .keywords
                .as_ref()
                .ok_or_else(|| config_error("the replace kind needs --keywords <FILE>"))?;
            let keywords = read_word_list(keywords_path)?;
            let vocab = match &args.vocab {
                Some(path) => read_word_list(path)?,
                None => keywords.clone(),
            };
            Ok(PerturbMode::Replace { keywords, vocab })
        }
        "mismatch" => Ok(PerturbMode::Mismatch),
        other => Ok(PerturbMode::Image(DistortKind::parse(other).or_config("--kind")?)),
    }
}

struct PairEvaluator<'a> {
    entries: &'a [ManifestEntry],
    manifest: &'a Path,
    mode: &'a PerturbMode,
    ctx: ScoringContext<'a>,
    cfg: &'a LeicaConfig,
    captions: Vec<Option<Caption>>,
    clean_scores: Vec<Option<f64>>,
    clean_errors: Vec<SampleError>,
}

impl<'a> PairEvaluator<'a> {
    fn new(
        entries: &'a [ManifestEntry],
        manifest: &'a Path,
        mode: &'a PerturbMode,
        ctx: ScoringContext<'a>,
        cfg: &'a LeicaConfig,
    ) -> CliResult<Self> {
        let ids = ids_of(entries);
        let outcome = score_batch(&ids, |i| load_entry(&entries[i], manifest), &ctx, cfg)
            .or_data("scoring clean side")?;
        if outcome.summary.scored == 0 {
            let first = outcome
                .errors
                .first()
                .map(|e| format!("{}: {}", e.id, e.error))
                .unwrap_or_default();
            return Err(data_error(format!(
                "no clean sample scored successfully (first error: {first})"
            )));
        }
        let mut clean_scores = vec![None; entries.len()];
        for score in &outcome.scores {
            let ix = entries.iter().position(|e| e.id == score.id).unwrap();
            clean_scores[ix] = Some(score.leica);
        }
        let captions = entries.iter().map(|e| parse_text(e).ok()).collect();
        Ok(Self {
            entries,
            manifest,
            mode,
            ctx,
            cfg,
            captions,
            clean_scores,
            clean_errors: outcome.errors,
        })
    }

    /// Scores the perturbed side at (degree, seed) and pairs it with the
    /// cached clean scores. Samples failing on either side are skipped.
    fn pairs_at(&self, degree: f64, seed: u64) -> CoreResult<Vec<JudgmentPair>> {
        let ids = ids_of(self.entries);
        let all_captions: Vec<Caption> = self.captions.iter().flatten().cloned().collect();
        let outcome = score_batch(
            &ids,
            |i| {
                let entry = &self.entries[i];
                let (cap, img) = load_entry(entry, self.manifest)?;
                let sample_seed = derive_seed(seed, "perturb-sample", &[i as u64]);
                match self.mode {
                    PerturbMode::Image(kind) => {
                        let spec = DistortionSpec { kind: *kind, degree, seed: sample_seed };
                        Ok((cap, distort_image(&img, &spec)?))
                    }
                    PerturbMode::Replace { keywords, vocab } => {
                        let spec = TextPerturbSpec {
                            kind: TextPerturbKind::ReplaceK { k: degree.round() as usize },
                            vocabulary: vocab.clone(),
                            seed: sample_seed,
                        };
                        Ok((perturb_text(&cap, &spec, keywords, &[])?, img))
                    }
                    PerturbMode::Mismatch => {
                        let spec = TextPerturbSpec {
                            kind: TextPerturbKind::Mismatch,
                            vocabulary: vec![],
                            seed: sample_seed,
                        };
                        Ok((perturb_text(&cap, &spec, &[], &all_captions)?, img))
                    }
                    PerturbMode::Paired(noised, noised_path) => {
                        let pair = noised
                            .iter()
                            .find(|e| e.id == entry.id)
                            .ok_or_else(|| {
                                leica_core::Error::IdMismatch(format!(
                                    "id {:?} missing from noised manifest",
                                    entry.id
                                ))
                            })?;
                        load_entry(pair, noised_path)
                    }
                }
            },
            &self.ctx,
            self.cfg,
        )?;
        let mut pairs = Vec::new();
        for score in &outcome.scores {
            let ix = self.entries.iter().position(|e| e.id == score.id).unwrap();
            if let Some(clean) = self.clean_scores[ix] {
                pairs.push(JudgmentPair {
                    id: score.id.clone(),
                    score_pos: clean,
                    score_neg: score.leica,
                });
            }
        }
        if pairs.is_empty() {
            return Err(leica_core::Error::EmptyInput(
                "no sample scored on both sides".into(),
            ));
        }
        Ok(pairs)
    }
}

pub fn cmd_metaeval(args: &MetaevalArgs) -> CliResult<()> {
    let jobs = init_jobs(args.run.jobs);
    let cfg = metric_config(&args.metric)?;
    let models = load_models(&args.models, !args.metric.ablate_s)?;
    let entries = read_entries(&args.manifest)?;
    let mode = metaeval_mode(args)?;
    if let PerturbMode::Paired(noised, _) = &mode {
        // Both manifests must cover exactly the same sample ids.
        let clean_ids: Vec<(String, ())> = entries.iter().map(|e| (e.id.clone(), ())).collect();
        let noised_ids: Vec<(String, ())> = noised.iter().map(|e| (e.id.clone(), ())).collect();
        build_triplets(&clean_ids, &noised_ids).or_data("pairing manifests")?;
    }
    let ctx = models.context();
    let evaluator = PairEvaluator::new(&entries, &args.manifest, &mode, ctx, &cfg)?;
    let echo = config_echo(Some(&args.manifest), &args.models, &cfg, args.run.seed, jobs);

    if args.ladder {
        if matches!(mode, PerturbMode::Paired(..)) {
            return Err(config_error("--ladder cannot be combined with --noised-manifest"));
        }
        let degrees: Vec<f64> = match (&args.degrees, &mode) {
            (Some(list), _) => list
                .split(',')
                .map(|d| d.trim().parse().or_config("--degrees"))
                .collect::<CliResult<_>>()?,
            (None, PerturbMode::Image(kind)) => default_ladder(*kind),
            (None, PerturbMode::Replace { .. }) => {
                default_word_ladder().into_iter().map(|k| k as f64).collect()
            }
            (None, PerturbMode::Mismatch) => vec![1.0],
            (None, PerturbMode::Paired(..)) => unreachable!(),
        };
        let seeds: Vec<u64> = (0..5).map(|i| derive_seed(args.run.seed, "ladder-run", &[i])).collect();
        let rungs = noise_ladder(&degrees, &seeds, |degree, seed| evaluator.pairs_at(degree, seed))
            .or_data("running degree ladder")?;
        let report = LadderReport {
            schema: LADDER_SCHEMA,
            command: "metaeval",
            mode: mode.name(),
            config: &echo,
            rungs: &rungs,
        };
        emit(args.out.as_deref(), &to_json(&report)?)?;
        if let Some(tsv) = &args.curves_tsv {
            emit(Some(tsv), &ladder_tsv(&rungs))?;
        }
        return Ok(());
    }

    let degree = match &mode {
        PerturbMode::Image(_) => args
            .degree
            .ok_or_else(|| config_error("image perturbation needs --degree (or --ladder)"))?,
        PerturbMode::Replace { .. } => args.k.unwrap_or(1) as f64,
        PerturbMode::Mismatch | PerturbMode::Paired(..) => 0.0,
    };
    let pairs = evaluator
        .pairs_at(degree, derive_seed(args.run.seed, "metaeval-run", &[]))
        .or_data("scoring perturbed side")?;
    let summary = evaluate_pairs(&pairs).or_data("computing statistics")?;
    let records: Vec<PairRecord> = pairs
        .iter()
        .map(|p| PairRecord { id: p.id.clone(), score_pos: p.score_pos, score_neg: p.score_neg })
        .collect();
    let report = MetaEvalReport {
        schema: METAEVAL_SCHEMA,
        command: "metaeval",
        mode: mode.name(),
        degree: matches!(mode, PerturbMode::Image(_)).then_some(degree),
        config: &echo,
        summary: &summary,
        pairs: &records,
        errors: &evaluator.clean_errors,
    };
    emit(args.out.as_deref(), &to_json(&report)?)?;
    if let Some(csv) = &args.pairs_csv {
        emit(Some(csv), &pairs_csv(&records))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rank

pub fn cmd_rank(args: &RankArgs) -> CliResult<()> {
    let jobs = init_jobs(args.run.jobs);
    let cfg = metric_config(&args.metric)?;
    let models = load_models(&args.models, !args.metric.ablate_s)?;
    let ctx = models.context();

    let mut ranked = Vec::new();
    for manifest in &args.manifests {
        let entries = read_entries(manifest)?;
        let ids = ids_of(&entries);
        let outcome = score_batch(&ids, |i| load_entry(&entries[i], manifest), &ctx, &cfg)
            .or_data(&format!("scoring {}", manifest.display()))?;
        let name = entries
            .iter()
            .find_map(|e| e.model.clone())
            .unwrap_or_else(|| {
                manifest
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| manifest.display().to_string())
            });
        ranked.push(RankedModel {
            rank: 0,
            model: name,
            mean: outcome.summary.mean,
            std: outcome.summary.std,
            scored: outcome.summary.scored,
            failed: outcome.summary.failed,
        });
    }
    ranked.sort_by(|a, b| {
        b.mean
            .partial_cmp(&a.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.model.cmp(&b.model))
    });
    for (i, m) in ranked.iter_mut().enumerate() {
        m.rank = i + 1;
    }

    let echo = config_echo(None, &args.models, &cfg, args.run.seed, jobs);
    let report = RankReport {
        schema: RANK_SCHEMA,
        command: "rank",
        config: &echo,
        models: &ranked,
    };
    match &args.out {
        Some(path) => {
            emit(Some(path), &to_json(&report)?)?;
            print!("{}", rank_table(&ranked));
            Ok(())
        }
        None => emit(None, &to_json(&report)?),
    }
}

// ---------------------------------------------------------------------------
// stability

pub fn cmd_stability(args: &StabilityArgs) -> CliResult<()> {
    let jobs = init_jobs(args.run.jobs);
    let cfg = metric_config(&args.metric)?;
    let models = load_models(&args.models, !args.metric.ablate_s)?;
    let entries = read_entries(&args.manifest)?;
    let ids = ids_of(&entries);
    let ctx = models.context();
    let outcome = score_batch(&ids, |i| load_entry(&entries[i], &args.manifest), &ctx, &cfg)
        .or_data("scoring manifest")?;
    if outcome.summary.scored == 0 {
        return Err(data_error("no sample scored successfully"));
    }
    let scores: Vec<f64> = outcome.scores.iter().map(|s| s.leica).collect();

    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| s.trim().parse().or_config("--sizes"))
        .collect::<CliResult<_>>()?;
    let stats = stability_sweep(scores.len(), &sizes, args.repeats, args.run.seed, |subset| {
        Ok(subset.iter().map(|i| scores[*i]).sum::<f64>() / subset.len() as f64)
    })
    .or_data("running stability sweep")?;

    let echo = config_echo(Some(&args.manifest), &args.models, &cfg, args.run.seed, jobs);
    let report = StabilityReport {
        schema: STABILITY_SCHEMA,
        command: "stability",
        config: &echo,
        repeats: args.repeats,
        total_samples: scores.len(),
        sizes: &stats,
    };
    emit(args.out.as_deref(), &to_json(&report)?)?;
    if let Some(tsv) = &args.curves_tsv {
        emit(Some(tsv), &stability_tsv(&stats))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// matcher-serve

#[derive(serde::Deserialize)]
struct MatcherRequest {
    caption: String,
    image: String,
}

pub fn cmd_matcher_serve(args: &MatcherServeArgs) -> CliResult<()> {
    let matcher = leica_core::semantic::LinearMatcher::read(&args.matcher)
        .or_config("reading matcher")?;
    let stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lines() {
        let line = line.or_data("reading request")?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serve_one(&matcher, &line) {
            Ok(json) => json,
            Err(message) => serde_json::json!({ "error": message }).to_string(),
        };
        stdout.write_all(reply.as_bytes()).or_data("writing response")?;
        stdout.write_all(b"\n").or_data("writing response")?;
        stdout.flush().or_data("flushing response")?;
    }
    Ok(())
}

fn serve_one(
    matcher: &leica_core::semantic::LinearMatcher,
    line: &str,
) -> Result<String, String> {
    let request: MatcherRequest =
        serde_json::from_str(line).map_err(|e| format!("bad request: {e}"))?;
    let cap = Caption::parse(&request.caption).map_err(|e| e.to_string())?;
    let img = ImageTensor::read_ppm(Path::new(&request.image)).map_err(|e| e.to_string())?;
    let map = patch_alignment(matcher, &cap, &img).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({ "phi": map.phi(), "psi": map.psi() }).to_string())
}

