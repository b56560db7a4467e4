//! Image and text distortions for meta-evaluation.
//!
//! Image kinds: additive Gaussian noise (`gn`, degree = variance), Gaussian
//! blur (`gb`, degree = kernel standard deviation), salt-and-pepper noise
//! (`spn`, degree = corrupted pixel fraction), a sinusoidal "funny mirror"
//! warp (`mirror`, degree = amplitude in pixels), and composed variants
//! (`gn+`, `gb+`, `spn+`) that warp first and then add the base noise.
//! Text kinds: replace k keywords with pool words, or swap the whole caption
//! for a mismatched one.
//!
//! Everything is a pure function of (input, spec, seed); degree 0 returns the
//! input unchanged for every kind.

use crate::caption::Caption;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{rng_from_seed, sample_standard_normal, sample_without_replacement, PortableRng};
use rand::Rng;

/// Mirror amplitude, in pixels, used by the composed "+" kinds.
pub const COMPOSED_MIRROR_AMPLITUDE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortKind {
    Gn,
    Gb,
    Spn,
    Mirror,
    GnPlus,
    GbPlus,
    SpnPlus,
}

impl DistortKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "gn" => Self::Gn,
            "gb" => Self::Gb,
            "spn" => Self::Spn,
            "mirror" => Self::Mirror,
            "gn+" => Self::GnPlus,
            "gb+" => Self::GbPlus,
            "spn+" => Self::SpnPlus,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown distortion kind {other:?} (expected gn, gb, spn, mirror, gn+, gb+, spn+)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gn => "gn",
            Self::Gb => "gb",
            Self::Spn => "spn",
            Self::Mirror => "mirror",
            Self::GnPlus => "gn+",
            Self::GbPlus => "gb+",
            Self::SpnPlus => "spn+",
        }
    }

    fn base(&self) -> Self {
        match self {
            Self::GnPlus => Self::Gn,
            Self::GbPlus => Self::Gb,
            Self::SpnPlus => Self::Spn,
            other => *other,
        }
    }

    fn is_composed(&self) -> bool {
        matches!(self, Self::GnPlus | Self::GbPlus | Self::SpnPlus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortKind,
    pub degree: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.degree.is_finite() || self.degree < 0.0 {
            return Err(Error::InvalidParameter(format!("degree {} must be >= 0", self.degree)));
        }
        if matches!(self.kind.base(), DistortKind::Spn) && self.degree > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "spn fraction {} must be <= 1",
                self.degree
            )));
        }
        Ok(())
    }
}

/// Applies a distortion. Deterministic in (image, spec).
pub fn distort_image(img: &ImageTensor, spec: &DistortionSpec) -> Result<ImageTensor> {
    spec.validate()?;
    if spec.degree == 0.0 {
        return Ok(img.clone());
    }
    let warped;
    let input = if spec.kind.is_composed() {
        warped = funny_mirror(img, COMPOSED_MIRROR_AMPLITUDE)?;
        &warped
    } else {
        img
    };
    match spec.kind.base() {
        DistortKind::Gn => gaussian_noise(input, spec.degree, spec.seed),
        DistortKind::Gb => gaussian_blur(input, spec.degree),
        DistortKind::Spn => salt_pepper(input, spec.degree, spec.seed),
        DistortKind::Mirror => funny_mirror(input, spec.degree),
        _ => unreachable!("base() never returns a composed kind"),
    }
}

/// Adds N(0, variance) per channel and clamps to [0,1].
fn gaussian_noise(img: &ImageTensor, variance: f64, seed: u64) -> Result<ImageTensor> {
    let std = variance.sqrt();
    let mut rng = rng_from_seed(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        let noisy = *v as f64 + std * sample_standard_normal(&mut rng);
        *v = noisy.clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Separable Gaussian blur, radius ceil(3σ), symmetric reflect padding.
fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();

    let (h, w) = (img.height() as i64, img.width() as i64);
    let reflect = |ix: i64, n: i64| -> usize {
        let mut i = ix;
        // symmetric reflection, edge repeated: -1 -> 0, n -> n-1
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };

    // Horizontal pass into a scratch buffer, then vertical pass.
    let mut horizontal = vec![0.0f64; (h * w * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sx = reflect(x + ki as i64 - radius, w);
                let p = img.pixel(y as usize, sx);
                for c in 0..3 {
                    acc[c] += k * p[c] as f64;
                }
            }
            let base = ((y * w + x) * 3) as usize;
            horizontal[base..base + 3].copy_from_slice(&acc);
        }
    }
    let mut data = vec![0.0f32; (h * w * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sy = reflect(y + ki as i64 - radius, h);
                let base = ((sy as i64 * w + x) * 3) as usize;
                for c in 0..3 {
                    acc[c] += k * horizontal[base + c];
                }
            }
            let base = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                data[base + c] = acc[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    ImageTensor::new(h as usize, w as usize, data)
}

/// Sets round(fraction·n) distinct pixels to pure black or white.
fn salt_pepper(img: &ImageTensor, fraction: f64, seed: u64) -> Result<ImageTensor> {
    let n = img.height() * img.width();
    let hits = (fraction * n as f64).round() as usize;
    let mut rng = rng_from_seed(seed);
    let picked = sample_without_replacement(&mut rng, n, hits.min(n));
    let mut out = img.clone();
    let data = out.data_mut();
    for pix in picked {
        let value = if rng.gen::<f64>() < 0.5 { 0.0 } else { 1.0 };
        data[pix * 3] = value;
        data[pix * 3 + 1] = value;
        data[pix * 3 + 2] = value;
    }
    Ok(out)
}

/// Sinusoidal warp: source(x,y) = (x + A·sin(2πy/P), y + A·sin(2πx/P)) with
/// period P = height/4, sampled bilinearly with edge clamping.
fn funny_mirror(img: &ImageTensor, amplitude: f64) -> Result<ImageTensor> {
    let (h, w) = (img.height(), img.width());
    let period = h as f64 / 4.0;
    let tau = std::f64::consts::TAU;
    let mut data = vec![0.0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + amplitude * (tau * y as f64 / period).sin();
            let sy = y as f64 + amplitude * (tau * x as f64 / period).sin();
            let p = bilinear_sample(img, sy, sx);
            let base = (y * w + x) * 3;
            data[base..base + 3].copy_from_slice(&p);
        }
    }
    ImageTensor::new(h, w, data)
}

fn bilinear_sample(img: &ImageTensor, y: f64, x: f64) -> [f32; 3] {
    let (h, w) = (img.height(), img.width());
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yc - y0 as f64;
    let fx = xc - x0 as f64;
    let p00 = img.pixel(y0, x0);
    let p01 = img.pixel(y0, x1);
    let p10 = img.pixel(y1, x0);
    let p11 = img.pixel(y1, x1);
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        out[c] = (p00[c] as f64 * (1.0 - fy) * (1.0 - fx)
            + p01[c] as f64 * (1.0 - fy) * fx
            + p10[c] as f64 * fy * (1.0 - fx)
            + p11[c] as f64 * fy * fx) as f32;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TextPerturbKind {
    /// Replace `k` keywords with words drawn from the vocabulary pool.
    ReplaceK { k: usize },
    /// Swap the caption for a different one from a pool.
    Mismatch,
}

#[derive(Debug, Clone)]
pub struct TextPerturbSpec {
    pub kind: TextPerturbKind,
    /// Replacement word pool for `ReplaceK`.
    pub vocabulary: Vec<String>,
    pub seed: u64,
}

/// Applies a text perturbation.
///
/// `keywords` defines which caption tokens are replaceable; `caption_pool`
/// supplies mismatch candidates (the original is never returned).
pub fn perturb_text(
    cap: &Caption,
    spec: &TextPerturbSpec,
    keywords: &[String],
    caption_pool: &[Caption],
) -> Result<Caption> {
    let mut rng = rng_from_seed(spec.seed);
    match &spec.kind {
        TextPerturbKind::ReplaceK { k } => replace_keywords(cap, *k, &spec.vocabulary, keywords, &mut rng),
        TextPerturbKind::Mismatch => {
            let candidates: Vec<&Caption> =
                caption_pool.iter().filter(|c| c.raw() != cap.raw()).collect();
            if candidates.is_empty() {
                return Err(Error::EmptyInput("mismatch pool has no other captions".into()));
            }
            Ok(candidates[rng.gen_range(0..candidates.len())].clone())
        }
    }
}

fn replace_keywords(
    cap: &Caption,
    k: usize,
    vocabulary: &[String],
    keywords: &[String],
    rng: &mut PortableRng,
) -> Result<Caption> {
    if k == 0 {
        return Ok(cap.clone());
    }
    if vocabulary.is_empty() {
        return Err(Error::EmptyInput("replacement vocabulary".into()));
    }
    let keyword_positions: Vec<usize> = cap
        .tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| keywords.contains(t))
        .map(|(i, _)| i)
        .collect();
    if k > keyword_positions.len() {
        return Err(Error::InsufficientKeywords { requested: k, available: keyword_positions.len() });
    }
    let chosen = sample_without_replacement(rng, keyword_positions.len(), k);
    let mut tokens: Vec<String> = cap.tokens().to_vec();
    for slot in chosen {
        let pos = keyword_positions[slot];
        tokens[pos] = vocabulary[rng.gen_range(0..vocabulary.len())].clone();
    }
    Caption::from_tokens(tokens)
}

/// A (text, noised image, clean image) evaluation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet<T> {
    pub id: String,
    pub clean: T,
    pub noised: T,
}

/// Pairs clean and distorted sets by id; both sides must cover exactly the
/// same ids. Output follows the clean set's order.
pub fn build_triplets<T: Clone>(
    clean: &[(String, T)],
    distorted: &[(String, T)],
) -> Result<Vec<Triplet<T>>> {
    use std::collections::BTreeMap;
    let mut noised: BTreeMap<&str, &T> = BTreeMap::new();
    for (id, item) in distorted {
        if noised.insert(id, item).is_some() {
            return Err(Error::IdMismatch(format!("duplicate id {id:?} in distorted set")));
        }
    }
    if clean.len() != distorted.len() {
        return Err(Error::IdMismatch(format!(
            "clean set has {} entries, distorted has {}",
            clean.len(),
            distorted.len()
        )));
    }
    let mut triplets = Vec::with_capacity(clean.len());
    for (id, item) in clean {
        let Some(n) = noised.get(id.as_str()) else {
            return Err(Error::IdMismatch(format!("id {id:?} missing from distorted set")));
        };
        triplets.push(Triplet { id: id.clone(), clean: item.clone(), noised: (*n).clone() });
    }
    Ok(triplets)
}
