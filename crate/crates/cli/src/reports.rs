//! Report envelopes and writers.
//!
//! All reports are serialized with stable field order and no timestamps, so
//! two runs with identical arguments produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use leica_core::metaeval::{LadderRung, MetaEvalSummary, SizeStats};
use leica_core::metric::{BatchSummary, SampleError, SampleScore};

use crate::errors::{CliResult, ErrorContext};
use crate::models::ConfigEcho;

pub const SCORE_SCHEMA: &str = "leica-report/1";
pub const METAEVAL_SCHEMA: &str = "leica-metaeval/1";
pub const LADDER_SCHEMA: &str = "leica-ladder/1";
pub const RANK_SCHEMA: &str = "leica-rank/1";
pub const STABILITY_SCHEMA: &str = "leica-stability/1";
pub const WORLD_SCHEMA: &str = "leica-world/1";

#[derive(Serialize)]
pub struct ScoreReport<'a> {
    pub schema: &'static str,
    pub command: &'static str,
    pub config: &'a ConfigEcho,
    pub summary: &'a BatchSummary,
    pub samples: &'a [SampleScore],
    pub errors: &'a [SampleError],
}

#[derive(Serialize)]
pub struct PairRecord {
    pub id: String,
    pub score_pos: f64,
    pub score_neg: f64,
}

#[derive(Serialize)]
pub struct MetaEvalReport<'a> {
    pub schema: &'static str,
    pub command: &'static str,
    pub mode: String,
    pub degree: Option<f64>,
    pub config: &'a ConfigEcho,
    pub summary: &'a MetaEvalSummary,
    pub pairs: &'a [PairRecord],
    pub errors: &'a [SampleError],
}

#[derive(Serialize)]
pub struct LadderReport<'a> {
    pub schema: &'static str,
    pub command: &'static str,
    pub mode: String,
    pub config: &'a ConfigEcho,
    pub rungs: &'a [LadderRung],
}

#[derive(Serialize)]
pub struct RankedModel {
    pub rank: usize,
    pub model: String,
    pub mean: f64,
    pub std: f64,
    pub scored: usize,
    pub failed: usize,
}

#[derive(Serialize)]
pub struct RankReport<'a> {
    pub schema: &'static str,
    pub command: &'static str,
    pub config: &'a ConfigEcho,
    pub models: &'a [RankedModel],
}

#[derive(Serialize)]
pub struct StabilityReport<'a> {
    pub schema: &'static str,
    pub command: &'static str,
    pub config: &'a ConfigEcho,
    pub repeats: usize,
    pub total_samples: usize,
    pub sizes: &'a [SizeStats],
}

/// Serializes a report as pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(report: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(report).or_internal("serializing report")?;
    s.push('\n');
    Ok(s)
}

/// Writes to the path, or stdout when none is given.
pub fn emit(out: Option<&Path>, content: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .or_data(&format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes()).or_internal("writing stdout")?;
            stdout.flush().or_internal("flushing stdout")
        }
    }
}

/// CSV of (id, score) rows.
pub fn scores_csv(samples: &[SampleScore]) -> String {
    let mut out = String::from("id,score\n");
    for s in samples {
        out.push_str(&format!("{},{}\n", s.id, s.leica));
    }
    out
}

/// CSV of per-pair scores.
pub fn pairs_csv(pairs: &[PairRecord]) -> String {
    let mut out = String::from("id,score_pos,score_neg\n");
    for p in pairs {
        out.push_str(&format!("{},{},{}\n", p.id, p.score_pos, p.score_neg));
    }
    out
}

/// Gnuplot-ready TSV of ladder curves.
pub fn ladder_tsv(rungs: &[LadderRung]) -> String {
    let mut out = String::from("degree\tmean_score\tstd_score\tkendall_tau\ttau_std\taccuracy\n");
    for r in rungs {
        let tau = r.kendall_tau.map_or("nan".to_string(), |v| v.to_string());
        let tau_std = r.kendall_tau_std.map_or("nan".to_string(), |v| v.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.degree, r.mean_score, r.std_score, tau, tau_std, r.accuracy
        ));
    }
    out
}

/// Gnuplot-ready TSV of stability curves.
pub fn stability_tsv(sizes: &[SizeStats]) -> String {
    let mut out = String::from("size\tmean\tstd\n");
    for s in sizes {
        out.push_str(&format!("{}\t{}\t{}\n", s.size, s.mean, s.std));
    }
    out
}

/// Human-readable ranking table.
pub fn rank_table(models: &[RankedModel]) -> String {
    let mut out = String::from("rank  model                     mean          std           n\n");
    for m in models {
        out.push_str(&format!(
            "{:<5} {:<25} {:<13.6} {:<13.6} {}\n",
            m.rank, m.model, m.mean, m.std, m.scored
        ));
    }
    out
}
