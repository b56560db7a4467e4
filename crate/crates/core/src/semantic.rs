//! Semantic credit assignment.
//!
//! A matcher exposes per-patch value vectors {v_t} from its image tower, the
//! final image projection W, and global embeddings for image and text. The
//! per-patch relevance is
//!
//! ```text
//! phi[t] = cosine(W · v_t, text_embedding)
//! ```
//!
//! and the global alignment psi is the cosine of the towers' (unmodified)
//! global embeddings. The s×s phi grid is bilinearly resized (align-corners)
//! to the code grid's h×w, negatives clip to zero, and the whole map scales
//! by e^(psi/tau):
//!
//! ```text
//! score[t] = e^(psi/tau) · max(phi_resized[t], 0)
//! ```
//!
//! [`LinearMatcher`] is the hermetic reference implementation: its image
//! tower featurizes each patch by soft color assignment, patch position and
//! a foreground weight, its value projection is an orthogonal matrix Q with
//! W = Qᵀ, and its text tower sums fixed per-word vectors. Real matchers can
//! be attached without linking through [`StdioMatcher`], which speaks
//! newline-delimited JSON over a child process's stdio (request:
//! `{"caption": ..., "image": <ppm path>}`; response:
//! `{"phi": [...], "psi": ...}`).
//!
//! ## Matcher file format ("LEIMM1")
//!
//! Little-endian: magic, patch pixels u32, counts (fg, bg, shape) u32, then
//! named fg/bg colors (name = u16 length + UTF-8, rgb 3×f32), shape entries
//! (name, coverage prototype f64), scalar params (kappa, coverage_sigma,
//! pos_weight, bg_weight, fg_threshold, noise_weight as f64), z-dim u32,
//! value projection and projection matrices (z² f64 each, row-major), and
//! the vocabulary (count u32, entries: name + z f64s).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;

use crate::caption::Caption;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{rng_from_seed, sample_standard_normal};

pub const MATCHER_MAGIC: &[u8; 6] = b"LEIMM1";

const POSITION_WORDS: [&str; 4] = ["top", "bottom", "left", "right"];

/// Per-patch and global alignment scores for one (caption, image) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    phi: Vec<f64>,
    psi: f64,
    s: usize,
}

impl SemanticMap {
    pub fn new(phi: Vec<f64>, psi: f64, s: usize) -> Result<Self> {
        if phi.len() != s * s || s == 0 {
            return Err(Error::DimensionMismatch(format!(
                "phi of length {} is not {s}x{s}",
                phi.len()
            )));
        }
        let bound = 1.0 + 1e-6;
        if phi.iter().any(|p| !p.is_finite() || p.abs() > bound) || !psi.is_finite() || psi.abs() > bound
        {
            return Err(Error::InvalidParameter("cosine scores must lie in [-1, 1]".into()));
        }
        Ok(Self { phi, psi, s })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn s(&self) -> usize {
        self.s
    }
}

/// Temperature and ablation switches for the scoring function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticConfig {
    /// Temperature for the global factor e^(psi/tau).
    pub tau: f64,
    /// When false the global factor is replaced by 1.
    pub use_global: bool,
    /// How the s×s phi grid is stretched to h×w.
    pub phi_resize: PhiResize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiResize {
    /// Resample phi as a 2-d s×s grid (default).
    TwoD,
    /// Resample phi as a 1-d sequence of length s².
    OneD,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self { tau: 0.07, use_global: true, phi_resize: PhiResize::TwoD }
    }
}

impl SemanticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }
}

/// Dense row-major matrix used for matcher projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Projection {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "projection {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "projection input dimension");
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Internals contract for matchers whose patch path we can open up.
pub trait PatchMatcher: Send + Sync {
    /// Pixel side length of one image-tower patch.
    fn patch_pixels(&self) -> usize;

    /// Text tower output for the caption (pre-normalization).
    fn text_embedding(&self, cap: &Caption) -> Vec<f64>;

    /// Global image embedding from the unmodified tower (pre-normalization).
    fn image_embedding(&self, img: &ImageTensor) -> Result<Vec<f64>>;

    /// Value-projection outputs {v_t}, row-major over the s×s patch grid.
    fn patch_values(&self, img: &ImageTensor) -> Result<Vec<Vec<f64>>>;

    /// Final image projection W applied to each v_t.
    fn projection(&self) -> &Projection;
}

/// What the scoring pipeline needs from any matcher, openable or not.
pub trait SemanticScorer: Send + Sync {
    fn alignment(&self, cap: &Caption, img: &ImageTensor) -> Result<SemanticMap>;
}

impl<M: PatchMatcher> SemanticScorer for M {
    fn alignment(&self, cap: &Caption, img: &ImageTensor) -> Result<SemanticMap> {
        patch_alignment(self, cap, img)
    }
}

fn cosine(a: &[f64], b: &[f64], what: &str) -> Result<f64> {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-30 || nb < 1e-30 {
        return Err(Error::ZeroNormEmbedding(what.to_string()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Computes phi (per patch, via W·v_t) and psi (global towers) in one pass.
pub fn patch_alignment<M: PatchMatcher + ?Sized>(
    model: &M,
    cap: &Caption,
    img: &ImageTensor,
) -> Result<SemanticMap> {
    let q = model.patch_pixels();
    if img.height() % q != 0 || img.width() % q != 0 {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} not divisible by matcher patch {q}",
            img.height(),
            img.width()
        )));
    }
    if img.height() != img.width() {
        return Err(Error::DimensionMismatch(format!(
            "matcher patch grid must be square, image is {}x{}",
            img.height(),
            img.width()
        )));
    }
    let s = img.height() / q;
    let text = model.text_embedding(cap);
    let values = model.patch_values(img)?;
    if values.len() != s * s {
        return Err(Error::DimensionMismatch(format!(
            "matcher returned {} patch values for an {s}x{s} grid",
            values.len()
        )));
    }
    let w = model.projection();
    let phi = values
        .iter()
        .map(|v| cosine(&w.apply(v), &text, "projected patch value"))
        .collect::<Result<Vec<f64>>>()?;
    let global = model.image_embedding(img)?;
    let psi = cosine(&global, &text, "global embedding")?;
    SemanticMap::new(phi, psi, s)
}

fn lerp_coord(dst: usize, dst_len: usize, src_len: usize) -> f64 {
    if dst_len <= 1 || src_len <= 1 {
        return 0.0;
    }
    dst as f64 * (src_len as f64 - 1.0) / (dst_len as f64 - 1.0)
}

/// Align-corners bilinear resample of an s×s map to h×w, flattened row-major.
pub fn resize_map(phi: &[f64], s: usize, h: usize, w: usize) -> Result<Vec<f64>> {
    if phi.len() != s * s || s == 0 {
        return Err(Error::DimensionMismatch(format!("phi of {} is not {s}x{s}", phi.len())));
    }
    if h == 0 || w == 0 {
        return Err(Error::DimensionMismatch("target grid must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(h * w);
    for oy in 0..h {
        let sy = lerp_coord(oy, h, s);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(s - 1);
        let fy = sy - y0 as f64;
        for ox in 0..w {
            let sx = lerp_coord(ox, w, s);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(s - 1);
            let fx = sx - x0 as f64;
            let v00 = phi[y0 * s + x0];
            let v01 = phi[y0 * s + x1];
            let v10 = phi[y1 * s + x0];
            let v11 = phi[y1 * s + x1];
            out.push(
                v00 * (1.0 - fy) * (1.0 - fx)
                    + v01 * (1.0 - fy) * fx
                    + v10 * fy * (1.0 - fx)
                    + v11 * fy * fx,
            );
        }
    }
    Ok(out)
}

/// Align-corners linear resample of phi as a flat sequence of length s².
pub fn resize_map_1d(phi: &[f64], m: usize) -> Result<Vec<f64>> {
    if phi.is_empty() || m == 0 {
        return Err(Error::DimensionMismatch("resize over empty sequence".into()));
    }
    let n = phi.len();
    let mut out = Vec::with_capacity(m);
    for t in 0..m {
        let src = lerp_coord(t, m, n);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let f = src - i0 as f64;
        out.push(phi[i0] * (1.0 - f) + phi[i1] * f);
    }
    Ok(out)
}

/// Final per-position semantic scores for an h×w code grid.
pub fn semantic_score(map: &SemanticMap, h: usize, w: usize, cfg: &SemanticConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let resized = match cfg.phi_resize {
        PhiResize::TwoD => resize_map(map.phi(), map.s(), h, w)?,
        PhiResize::OneD => resize_map_1d(map.phi(), h * w)?,
    };
    let factor = if cfg.use_global { (map.psi() / cfg.tau).exp() } else { 1.0 };
    Ok(resized.into_iter().map(|p| factor * p.max(0.0)).collect())
}

/// Named palette the reference matcher is built around.
#[derive(Debug, Clone)]
pub struct MatcherPalette {
    pub fg_colors: Vec<(String, [f32; 3])>,
    pub bg_colors: Vec<(String, [f32; 3])>,
    /// Shape word and its bounding-box coverage prototype.
    pub shapes: Vec<(String, f64)>,
}

/// Featurization constants for the reference matcher.
#[derive(Debug, Clone, Copy)]
pub struct MatcherParams {
    /// Softness of color assignment (squared-distance scale).
    pub kappa: f64,
    /// Softness of the shape coverage assignment.
    pub coverage_sigma: f64,
    /// Weight of the position dimensions.
    pub pos_weight: f64,
    /// Weight of the background dimensions.
    pub bg_weight: f64,
    /// Squared RGB distance from the border estimate above which a pixel
    /// counts as foreground.
    pub fg_threshold: f64,
    /// Weight of the off-palette energy dimension in the global embedding.
    /// No word activates that dimension, so any off-palette content rotates
    /// the image embedding away from every caption.
    pub noise_weight: f64,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self {
            kappa: 0.05,
            coverage_sigma: 0.08,
            pos_weight: 0.75,
            bg_weight: 0.5,
            fg_threshold: 0.08,
            noise_weight: 2.0,
        }
    }
}

/// Hermetic reference matcher over a fixed palette.
///
/// Embedding layout: [fg colors | shapes | top,bottom,left,right | bg colors].
/// The patch tower activates the fg-color block and the patch's own position
/// scaled by a foregroundness weight, value-projects through an orthogonal Q,
/// and W = Qᵀ recovers the activation exactly. The global tower estimates
/// scene attributes (foreground color, shape coverage class, centroid
/// position, border color) directly from pixels.
#[derive(Debug, Clone)]
pub struct LinearMatcher {
    patch_pixels: usize,
    palette: MatcherPalette,
    params: MatcherParams,
    z_dim: usize,
    value_proj: Projection,
    projection: Projection,
    vocab: BTreeMap<String, Vec<f64>>,
}

impl LinearMatcher {
    pub fn new(patch_pixels: usize, palette: MatcherPalette, params: MatcherParams, seed: u64) -> Result<Self> {
        if patch_pixels == 0 {
            return Err(Error::InvalidParameter("matcher patch must be positive".into()));
        }
        if palette.fg_colors.is_empty() || palette.bg_colors.is_empty() || palette.shapes.is_empty() {
            return Err(Error::InvalidParameter("matcher palette must be populated".into()));
        }
        // Palette blocks, four position dims, one off-palette energy dim.
        let z_dim = palette.fg_colors.len() + palette.shapes.len() + 4 + palette.bg_colors.len() + 1;
        let q = random_orthogonal(z_dim, seed);
        let qt = transpose(&q, z_dim);
        let vocab = build_vocab(&palette, &params, z_dim);
        Ok(Self {
            patch_pixels,
            palette,
            params,
            z_dim,
            value_proj: Projection::new(z_dim, z_dim, q)?,
            projection: Projection::new(z_dim, z_dim, qt)?,
            vocab,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn palette(&self) -> &MatcherPalette {
        &self.palette
    }

    fn color_offset(&self) -> usize {
        0
    }

    fn shape_offset(&self) -> usize {
        self.palette.fg_colors.len()
    }

    fn pos_offset(&self) -> usize {
        self.shape_offset() + self.palette.shapes.len()
    }

    fn bg_offset(&self) -> usize {
        self.pos_offset() + 4
    }

    fn noise_offset(&self) -> usize {
        self.bg_offset() + self.palette.bg_colors.len()
    }

    /// Squared RGB distance to the nearest named color (fg or bg).
    fn palette_distance_sq(&self, rgb: [f32; 3]) -> f64 {
        let mut best = f64::INFINITY;
        for (_, c) in self.palette.fg_colors.iter().chain(&self.palette.bg_colors) {
            let d: f64 = rgb
                .iter()
                .zip(c)
                .map(|(a, b)| ((*a - *b) as f64).powi(2))
                .sum();
            if d < best {
                best = d;
            }
        }
        best
    }

    /// Soft assignment of an RGB value over a color table.
    fn color_softs(&self, rgb: [f32; 3], table: &[(String, [f32; 3])]) -> (Vec<f64>, f64) {
        let mut softs = Vec::with_capacity(table.len());
        let mut best = 0.0f64;
        for (_, c) in table {
            let d: f64 = rgb
                .iter()
                .zip(c)
                .map(|(a, b)| ((*a - *b) as f64).powi(2))
                .sum();
            let a = (-d / self.params.kappa).exp();
            if a > best {
                best = a;
            }
            softs.push(a);
        }
        let sum: f64 = softs.iter().sum();
        if sum > 0.0 {
            softs.iter_mut().for_each(|s| *s /= sum);
        }
        (softs, best)
    }

    /// Activation vector for one patch given its mean color and center.
    fn patch_activation(&self, mean_rgb: [f32; 3], cy: f64, cx: f64, h: f64, w: f64) -> Vec<f64> {
        let (fg_softs, fg_best) = self.color_softs(mean_rgb, &self.palette.fg_colors);
        let (bg_softs, bg_best) = self.color_softs(mean_rgb, &self.palette.bg_colors);
        let g = fg_best / (fg_best + bg_best).max(1e-300);
        let mut z = vec![0.0f64; self.z_dim];
        for (i, s) in fg_softs.iter().enumerate() {
            z[self.color_offset() + i] = s * g;
        }
        let memberships = position_memberships(cy, cx, h, w);
        for (i, m) in memberships.iter().enumerate() {
            z[self.pos_offset() + i] = m * g * self.params.pos_weight;
        }
        for (i, s) in bg_softs.iter().enumerate() {
            z[self.bg_offset() + i] = s * (1.0 - g) * self.params.bg_weight;
        }
        z
    }

    /// Scene attributes from pixels: border color, foreground mass, coverage.
    fn global_activation(&self, img: &ImageTensor) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        // Border ring estimate of the background color.
        let mut border_sum = [0.0f64; 3];
        let mut border_n = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                if y > 1 && y < h - 2 && x > 1 && x < w - 2 {
                    continue;
                }
                let p = img.pixel(y, x);
                for c in 0..3 {
                    border_sum[c] += p[c] as f64;
                }
                border_n += 1.0;
            }
        }
        let bg_est = [
            (border_sum[0] / border_n) as f32,
            (border_sum[1] / border_n) as f32,
            (border_sum[2] / border_n) as f32,
        ];

        // Foreground mass (pixels far from the border estimate) and the
        // off-palette energy of the whole frame.
        let mut fg_sum = [0.0f64; 3];
        let mut fg_n = 0.0f64;
        let mut cy = 0.0f64;
        let mut cx = 0.0f64;
        let mut energy = 0.0f64;
        let (mut min_y, mut max_y, mut min_x, mut max_x) = (h, 0usize, w, 0usize);
        for y in 0..h {
            for x in 0..w {
                let p = img.pixel(y, x);
                energy += self.palette_distance_sq(p);
                let d: f64 = p
                    .iter()
                    .zip(&bg_est)
                    .map(|(a, b)| ((*a - *b) as f64).powi(2))
                    .sum();
                if d > self.params.fg_threshold {
                    for c in 0..3 {
                        fg_sum[c] += p[c] as f64;
                    }
                    fg_n += 1.0;
                    cy += y as f64;
                    cx += x as f64;
                    min_y = min_y.min(y);
                    max_y = max_y.max(y);
                    min_x = min_x.min(x);
                    max_x = max_x.max(x);
                }
            }
        }

        let mut z = vec![0.0f64; self.z_dim];
        z[self.noise_offset()] = self.params.noise_weight * (energy / (h * w) as f64).sqrt();
        let (bg_softs, _) = self.color_softs(bg_est, &self.palette.bg_colors);
        for (i, s) in bg_softs.iter().enumerate() {
            z[self.bg_offset() + i] = s * self.params.bg_weight;
        }
        if fg_n > 0.0 {
            let fg_mean = [
                (fg_sum[0] / fg_n) as f32,
                (fg_sum[1] / fg_n) as f32,
                (fg_sum[2] / fg_n) as f32,
            ];
            let (fg_softs, _) = self.color_softs(fg_mean, &self.palette.fg_colors);
            for (i, s) in fg_softs.iter().enumerate() {
                z[self.color_offset() + i] = *s;
            }
            let bbox = ((max_y - min_y + 1) * (max_x - min_x + 1)) as f64;
            let coverage = fg_n / bbox;
            let mut shape_softs: Vec<f64> = self
                .palette
                .shapes
                .iter()
                .map(|(_, proto)| {
                    (-(coverage - proto).powi(2) / self.params.coverage_sigma.powi(2)).exp()
                })
                .collect();
            let sum: f64 = shape_softs.iter().sum();
            if sum > 0.0 {
                shape_softs.iter_mut().for_each(|s| *s /= sum);
            }
            for (i, s) in shape_softs.iter().enumerate() {
                z[self.shape_offset() + i] = *s;
            }
            let memberships = position_memberships(cy / fg_n, cx / fg_n, h as f64, w as f64);
            for (i, m) in memberships.iter().enumerate() {
                z[self.pos_offset() + i] = m * self.params.pos_weight;
            }
        }
        z
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MATCHER_MAGIC)?;
        w.write_all(&(self.patch_pixels as u32).to_le_bytes())?;
        w.write_all(&(self.palette.fg_colors.len() as u32).to_le_bytes())?;
        w.write_all(&(self.palette.bg_colors.len() as u32).to_le_bytes())?;
        w.write_all(&(self.palette.shapes.len() as u32).to_le_bytes())?;
        for (name, rgb) in &self.palette.fg_colors {
            write_name(&mut w, name)?;
            for c in rgb {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        for (name, rgb) in &self.palette.bg_colors {
            write_name(&mut w, name)?;
            for c in rgb {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        for (name, proto) in &self.palette.shapes {
            write_name(&mut w, name)?;
            w.write_all(&proto.to_le_bytes())?;
        }
        for v in [
            self.params.kappa,
            self.params.coverage_sigma,
            self.params.pos_weight,
            self.params.bg_weight,
            self.params.fg_threshold,
            self.params.noise_weight,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.z_dim as u32).to_le_bytes())?;
        for v in &self.value_proj.data {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.projection.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.vocab.len() as u32).to_le_bytes())?;
        for (word, vec) in &self.vocab {
            write_name(&mut w, word)?;
            for v in vec {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MATCHER_MAGIC {
            return Err(Error::Format(format!("bad matcher magic {magic:?}")));
        }
        let patch_pixels = read_u32(&mut r)? as usize;
        let n_fg = read_u32(&mut r)? as usize;
        let n_bg = read_u32(&mut r)? as usize;
        let n_shape = read_u32(&mut r)? as usize;
        let mut fg_colors = Vec::with_capacity(n_fg);
        for _ in 0..n_fg {
            let name = read_name(&mut r)?;
            fg_colors.push((name, [read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?]));
        }
        let mut bg_colors = Vec::with_capacity(n_bg);
        for _ in 0..n_bg {
            let name = read_name(&mut r)?;
            bg_colors.push((name, [read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?]));
        }
        let mut shapes = Vec::with_capacity(n_shape);
        for _ in 0..n_shape {
            let name = read_name(&mut r)?;
            shapes.push((name, read_f64(&mut r)?));
        }
        let params = MatcherParams {
            kappa: read_f64(&mut r)?,
            coverage_sigma: read_f64(&mut r)?,
            pos_weight: read_f64(&mut r)?,
            bg_weight: read_f64(&mut r)?,
            fg_threshold: read_f64(&mut r)?,
            noise_weight: read_f64(&mut r)?,
        };
        let z_dim = read_u32(&mut r)? as usize;
        if z_dim != n_fg + n_shape + 4 + n_bg + 1 {
            return Err(Error::Format(format!("matcher z-dim {z_dim} inconsistent with palette")));
        }
        let mut value_proj = vec![0.0f64; z_dim * z_dim];
        for v in value_proj.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        let mut projection = vec![0.0f64; z_dim * z_dim];
        for v in projection.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        let n_vocab = read_u32(&mut r)? as usize;
        let mut vocab = BTreeMap::new();
        for _ in 0..n_vocab {
            let word = read_name(&mut r)?;
            let mut vec = vec![0.0f64; z_dim];
            for v in vec.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            vocab.insert(word, vec);
        }
        Ok(Self {
            patch_pixels,
            palette: MatcherPalette { fg_colors, bg_colors, shapes },
            params,
            z_dim,
            value_proj: Projection::new(z_dim, z_dim, value_proj)?,
            projection: Projection::new(z_dim, z_dim, projection)?,
            vocab,
        })
    }
}

impl PatchMatcher for LinearMatcher {
    fn patch_pixels(&self) -> usize {
        self.patch_pixels
    }

    fn text_embedding(&self, cap: &Caption) -> Vec<f64> {
        let mut sum = vec![0.0f64; self.z_dim];
        for token in cap.tokens() {
            if let Some(vec) = self.vocab.get(token) {
                for (s, v) in sum.iter_mut().zip(vec) {
                    *s += v;
                }
            }
        }
        sum
    }

    fn image_embedding(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.global_activation(img))
    }

    fn patch_values(&self, img: &ImageTensor) -> Result<Vec<Vec<f64>>> {
        let q = self.patch_pixels;
        if img.height() % q != 0 || img.width() % q != 0 {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} not divisible by matcher patch {q}",
                img.height(),
                img.width()
            )));
        }
        let sy = img.height() / q;
        let sx = img.width() / q;
        let mut values = Vec::with_capacity(sy * sx);
        for py in 0..sy {
            for px in 0..sx {
                let mut sum = [0.0f64; 3];
                for y in 0..q {
                    for x in 0..q {
                        let p = img.pixel(py * q + y, px * q + x);
                        for c in 0..3 {
                            sum[c] += p[c] as f64;
                        }
                    }
                }
                let n = (q * q) as f64;
                let mean = [(sum[0] / n) as f32, (sum[1] / n) as f32, (sum[2] / n) as f32];
                let cy = (py * q) as f64 + q as f64 / 2.0;
                let cx = (px * q) as f64 + q as f64 / 2.0;
                let z = self.patch_activation(mean, cy, cx, img.height() as f64, img.width() as f64);
                values.push(self.value_proj.apply(&z));
            }
        }
        Ok(values)
    }

    fn projection(&self) -> &Projection {
        &self.projection
    }
}

/// Memberships over (top, bottom, left, right) for a point in pixel coords.
fn position_memberships(cy: f64, cx: f64, h: f64, w: f64) -> [f64; 4] {
    let top = (1.0 - 2.0 * cy / h).max(0.0);
    let bottom = (2.0 * cy / h - 1.0).max(0.0);
    let left = (1.0 - 2.0 * cx / w).max(0.0);
    let right = (2.0 * cx / w - 1.0).max(0.0);
    [top, bottom, left, right]
}

fn build_vocab(palette: &MatcherPalette, params: &MatcherParams, z_dim: usize) -> BTreeMap<String, Vec<f64>> {
    let mut vocab = BTreeMap::new();
    let one_hot = |ix: usize, scale: f64| {
        let mut v = vec![0.0f64; z_dim];
        v[ix] = scale;
        v
    };
    for (i, (name, _)) in palette.fg_colors.iter().enumerate() {
        vocab.insert(name.clone(), one_hot(i, 1.0));
    }
    let shape_off = palette.fg_colors.len();
    for (i, (name, _)) in palette.shapes.iter().enumerate() {
        vocab.insert(name.clone(), one_hot(shape_off + i, 1.0));
    }
    let pos_off = shape_off + palette.shapes.len();
    for (i, word) in POSITION_WORDS.iter().enumerate() {
        vocab.insert(word.to_string(), one_hot(pos_off + i, params.pos_weight));
    }
    let bg_off = pos_off + 4;
    for (i, (name, _)) in palette.bg_colors.iter().enumerate() {
        vocab.insert(name.clone(), one_hot(bg_off + i, params.bg_weight));
    }
    vocab
}

fn random_orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut row: Vec<f64> = (0..n).map(|_| sample_standard_normal(&mut rng)).collect();
        for prev in &rows {
            let dot: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (r, p) in row.iter_mut().zip(prev) {
                *r -= dot * p;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        row.iter_mut().for_each(|v| *v /= norm);
        rows.push(row);
    }
    rows.into_iter().flatten().collect()
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = m[r * n + c];
        }
    }
    out
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    let bytes = name.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::InvalidParameter("name too long for matcher file".into()));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let len = u16::from_le_bytes(b2) as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| Error::Format("matcher name is not UTF-8".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_bits(u64::from_le_bytes(buf)))
}

/// Bridges the matcher contract to an external process over stdio.
///
/// Each alignment call writes the in-memory image to a PPM in a private temp
/// directory, sends one JSON request line, and reads one JSON response line.
pub struct StdioMatcher {
    child: Mutex<StdioChild>,
    workdir: tempfile::TempDir,
    counter: Mutex<u64>,
}

struct StdioChild {
    process: Child,
    stdin: std::process::ChildStdin,
    stdout: BufReader<std::process::ChildStdout>,
}

#[derive(Deserialize)]
struct StdioResponse {
    phi: Vec<f64>,
    psi: f64,
}

impl StdioMatcher {
    /// Spawns `program args...` and holds it for the matcher's lifetime.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut process = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Backend(format!("spawning matcher {program}: {e}")))?;
        let stdin = process.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(process.stdout.take().expect("piped stdout"));
        Ok(Self {
            child: Mutex::new(StdioChild { process, stdin, stdout }),
            workdir: tempfile::tempdir().map_err(Error::Io)?,
            counter: Mutex::new(0),
        })
    }
}

impl Drop for StdioMatcher {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.process.kill();
            let _ = child.process.wait();
        }
    }
}

impl SemanticScorer for StdioMatcher {
    fn alignment(&self, cap: &Caption, img: &ImageTensor) -> Result<SemanticMap> {
        let path = {
            let mut counter = self.counter.lock().expect("counter lock");
            *counter += 1;
            self.workdir.path().join(format!("req-{:08}.ppm", *counter))
        };
        img.write_ppm(&path)?;
        let request = serde_json::json!({
            "caption": cap.raw(),
            "image": path.to_string_lossy(),
        });
        let response: StdioResponse = {
            let mut child = self.child.lock().expect("matcher lock");
            let line = serde_json::to_string(&request)?;
            child
                .stdin
                .write_all(line.as_bytes())
                .and_then(|_| child.stdin.write_all(b"\n"))
                .and_then(|_| child.stdin.flush())
                .map_err(|e| Error::Backend(format!("matcher stdin: {e}")))?;
            let mut reply = String::new();
            let n = child
                .stdout
                .read_line(&mut reply)
                .map_err(|e| Error::Backend(format!("matcher stdout: {e}")))?;
            if n == 0 {
                return Err(Error::Backend("matcher process closed its stdout".into()));
            }
            serde_json::from_str(&reply)
                .map_err(|e| Error::Backend(format!("matcher reply not understood: {e}")))?
        };
        let _ = std::fs::remove_file(&path);
        let s = (response.phi.len() as f64).sqrt().round() as usize;
        if s * s != response.phi.len() || s == 0 {
            return Err(Error::Backend(format!(
                "matcher returned phi of length {}, not a square grid",
                response.phi.len()
            )));
        }
        SemanticMap::new(response.phi, response.psi, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FixedMatcher {
        text: Vec<f64>,
        values: Vec<Vec<f64>>,
        proj: Projection,
    }

    impl PatchMatcher for FixedMatcher {
        fn patch_pixels(&self) -> usize {
            4
        }
        fn text_embedding(&self, _cap: &Caption) -> Vec<f64> {
            self.text.clone()
        }
        fn image_embedding(&self, _img: &ImageTensor) -> Result<Vec<f64>> {
            Ok(self.text.clone())
        }
        fn patch_values(&self, _img: &ImageTensor) -> Result<Vec<Vec<f64>>> {
            Ok(self.values.clone())
        }
        fn projection(&self) -> &Projection {
            &self.proj
        }
    }

    fn identity(n: usize) -> Projection {
        let mut data = vec![0.0f64; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Projection::new(n, n, data).unwrap()
    }

    fn gray_image(side: usize) -> ImageTensor {
        ImageTensor::filled(side, side, [0.5, 0.5, 0.5]).unwrap()
    }

    #[test]
    fn aligned_values_give_phi_one() {
        let text = vec![0.3, -0.2, 0.9];
        let m = FixedMatcher {
            text: text.clone(),
            values: vec![text.clone(); 4],
            proj: identity(3),
        };
        let cap = Caption::parse("x").unwrap();
        let map = patch_alignment(&m, &cap, &gray_image(8)).unwrap();
        assert_eq!(map.s(), 2);
        for p in map.phi() {
            assert!((p - 1.0).abs() < 1e-12);
        }
        assert!((map.psi() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_values_give_phi_zero() {
        let m = FixedMatcher {
            text: vec![1.0, 0.0],
            values: vec![vec![0.0, 1.0]; 4],
            proj: identity(2),
        };
        let cap = Caption::parse("x").unwrap();
        let map = patch_alignment(&m, &cap, &gray_image(8)).unwrap();
        for p in map.phi() {
            assert!(p.abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_patch_values_leaves_phi_unchanged() {
        let values: Vec<Vec<f64>> = vec![
            vec![0.2, 0.7],
            vec![-0.4, 0.1],
            vec![0.9, 0.9],
            vec![0.3, -0.8],
        ];
        let cap = Caption::parse("x").unwrap();
        let base = FixedMatcher { text: vec![1.0, 0.4], values: values.clone(), proj: identity(2) };
        let scaled = FixedMatcher {
            text: vec![1.0, 0.4],
            values: values.iter().map(|v| v.iter().map(|x| x * 37.5).collect()).collect(),
            proj: identity(2),
        };
        let a = patch_alignment(&base, &cap, &gray_image(8)).unwrap();
        let b = patch_alignment(&scaled, &cap, &gray_image(8)).unwrap();
        for (x, y) in a.phi().iter().zip(b.phi()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_text_embedding_is_an_error() {
        let m = FixedMatcher {
            text: vec![0.0, 0.0],
            values: vec![vec![1.0, 0.0]; 4],
            proj: identity(2),
        };
        let cap = Caption::parse("x").unwrap();
        assert!(matches!(
            patch_alignment(&m, &cap, &gray_image(8)),
            Err(Error::ZeroNormEmbedding(_))
        ));
    }

    #[test]
    fn resize_identity_when_shapes_match() {
        let phi = vec![0.1, 0.2, 0.3, 0.4];
        let out = resize_map(&phi, 2, 2, 2).unwrap();
        for (a, b) in phi.iter().zip(&out) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn resize_preserves_constants() {
        let phi = vec![0.37; 9];
        let out = resize_map(&phi, 3, 7, 5).unwrap();
        for v in out {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_closed_form_two_to_four() {
        let phi = vec![0.0, 1.0, 0.0, 1.0]; // [[0,1],[0,1]]
        let out = resize_map(&phi, 2, 4, 4).unwrap();
        let expected_cols = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in 0..4 {
            for col in 0..4 {
                assert!(
                    (out[row * 4 + col] - expected_cols[col]).abs() < 1e-12,
                    "row {row} col {col}: {}",
                    out[row * 4 + col]
                );
            }
        }
    }

    #[test]
    fn resize_1d_interpolates_linearly() {
        let phi = vec![0.0, 1.0];
        let out = resize_map_1d(&phi, 5).unwrap();
        let expected = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_phi_scores_zero() {
        let map = SemanticMap::new(vec![-0.3; 4], 0.5, 2).unwrap();
        let cfg = SemanticConfig::default();
        let out = semantic_score(&map, 4, 4, &cfg).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_computed_semantic_score() {
        let map = SemanticMap::new(vec![0.5; 4], 0.3, 2).unwrap();
        let out = semantic_score(&map, 2, 2, &SemanticConfig::default()).unwrap();
        for v in &out {
            assert!((v - 36.33).abs() < 0.05, "score {v}");
        }
    }

    #[test]
    fn disabled_global_factor_passes_phi_through() {
        let map = SemanticMap::new(vec![0.5; 4], 0.9, 2).unwrap();
        let cfg = SemanticConfig { use_global: false, ..SemanticConfig::default() };
        let out = semantic_score(&map, 2, 2, &cfg).unwrap();
        for v in &out {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn score_sum_increases_with_psi() {
        let cfg = SemanticConfig::default();
        let mut prev = -1.0f64;
        for i in 0..10 {
            let psi = -0.5 + i as f64 * 0.15;
            let map = SemanticMap::new(vec![0.5, -0.2, 0.3, 0.1], psi, 2).unwrap();
            let sum: f64 = semantic_score(&map, 2, 2, &cfg).unwrap().iter().sum();
            assert!(sum > prev, "psi {psi}: {sum} <= {prev}");
            prev = sum;
        }
    }

    fn test_palette() -> MatcherPalette {
        MatcherPalette {
            fg_colors: vec![
                ("red".into(), [1.0, 0.0, 0.0]),
                ("blue".into(), [0.0, 0.0, 1.0]),
            ],
            bg_colors: vec![("gray".into(), [0.5, 0.5, 0.5])],
            shapes: vec![("square".into(), 1.0), ("circle".into(), 0.785)],
        }
    }

    #[test]
    fn linear_matcher_prefers_matching_color() {
        let m = LinearMatcher::new(4, test_palette(), MatcherParams::default(), 5).unwrap();
        // Red square in the top-left quadrant on gray.
        let img = ImageTensor::from_fn(16, 16, |y, x| {
            if y < 8 && x < 8 {
                [1.0, 0.0, 0.0]
            } else {
                [0.5, 0.5, 0.5]
            }
        })
        .unwrap();
        let cap = Caption::parse("a red square in the top left on gray").unwrap();
        let map = patch_alignment(&m, &cap, &img).unwrap();
        // Top-left patches should dominate.
        let argmax = map
            .phi()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let (row, col) = (argmax / map.s(), argmax % map.s());
        assert!(row < map.s() / 2 && col < map.s() / 2, "argmax at ({row},{col})");

        let mismatched = Caption::parse("a blue square in the top left on gray").unwrap();
        let map2 = patch_alignment(&m, &mismatched, &img).unwrap();
        assert!(map.psi() > map2.psi(), "psi {} vs {}", map.psi(), map2.psi());
    }

    #[test]
    fn linear_matcher_round_trips_through_file() {
        let m = LinearMatcher::new(4, test_palette(), MatcherParams::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        m.write(&path).unwrap();
        let back = LinearMatcher::read(&path).unwrap();
        let img = ImageTensor::from_fn(16, 16, |y, x| {
            if (y + x) % 3 == 0 {
                [1.0, 0.0, 0.0]
            } else {
                [0.5, 0.5, 0.5]
            }
        })
        .unwrap();
        let cap = Caption::parse("a red circle in the bottom right on gray").unwrap();
        let a = patch_alignment(&m, &cap, &img).unwrap();
        let b = patch_alignment(&back, &cap, &img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn projection_recovers_activation_through_orthogonal_pair() {
        let m = LinearMatcher::new(4, test_palette(), MatcherParams::default(), 5).unwrap();
        let img = gray_image(8);
        let values = m.patch_values(&img).unwrap();
        let w = m.projection();
        for v in &values {
            let z = w.apply(v);
            // Re-projecting through Q must reproduce v.
            let back = m.value_proj.apply(&z);
            for (a, b) in v.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
