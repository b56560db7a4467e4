//! A fully enumerable text-image universe for hermetic testing.
//!
//! Scenes are one flat-colored shape (square, circle, or triangle) in one
//! quadrant over a muted background, captioned from a fixed template:
//! "a red square in the top left on gray". 3 shapes × 8 colors × 4 quadrants
//! × 4 backgrounds = 384 distinct scenes; a per-scene seed jitters the shape
//! center and size inside its quadrant, so the universe has in-distribution
//! variation without breaking any invariant (the shape never leaves its
//! quadrant).
//!
//! [`build_oracles`] fits the whole reference stack on the enumerated corpus:
//! a k-means codebook over patch features, a count-model estimator, a code
//! prior, and a constructed matcher. Everything is deterministic in the
//! config seeds.

use crate::caption::Caption;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::kmeans::kmeans;
use crate::likelihood::CountModel;
use crate::par;
use crate::perceptual::{estimate_prior, CodePrior};
use crate::rng::{derive_seed, rng_from_seed};
use crate::semantic::{LinearMatcher, MatcherPalette, MatcherParams};
use crate::tokenizer::{quantize, CodeGrid, Codebook, PatchEncoder};
use rand::Rng;

pub const FG_COLORS: [(&str, [f32; 3]); 8] = [
    ("red", [0.90, 0.10, 0.10]),
    ("green", [0.10, 0.75, 0.10]),
    ("blue", [0.10, 0.10, 0.90]),
    ("yellow", [0.95, 0.90, 0.10]),
    ("cyan", [0.10, 0.85, 0.90]),
    ("magenta", [0.90, 0.10, 0.85]),
    ("orange", [0.95, 0.55, 0.10]),
    ("purple", [0.55, 0.10, 0.75]),
];

pub const BG_COLORS: [(&str, [f32; 3]); 4] = [
    ("gray", [0.50, 0.50, 0.50]),
    ("sand", [0.76, 0.69, 0.50]),
    ("sage", [0.55, 0.66, 0.55]),
    ("slate", [0.42, 0.46, 0.58]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn word(&self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }

    /// Fraction of the bounding box the shape fills (exact for the renderer).
    pub fn coverage(&self) -> f64 {
        match self {
            Shape::Square => 1.0,
            Shape::Circle => std::f64::consts::FRAC_PI_4,
            Shape::Triangle => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::TopLeft,
        Quadrant::TopRight,
        Quadrant::BottomLeft,
        Quadrant::BottomRight,
    ];

    pub fn phrase(&self) -> &'static str {
        match self {
            Quadrant::TopLeft => "top left",
            Quadrant::TopRight => "top right",
            Quadrant::BottomLeft => "bottom left",
            Quadrant::BottomRight => "bottom right",
        }
    }

    /// (row, col) of the quadrant in the 2×2 layout.
    fn cell(&self) -> (usize, usize) {
        match self {
            Quadrant::TopLeft => (0, 0),
            Quadrant::TopRight => (0, 1),
            Quadrant::BottomLeft => (1, 0),
            Quadrant::BottomRight => (1, 1),
        }
    }
}

/// Everything that defines one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: usize,
    pub quadrant: Quadrant,
    pub background: usize,
    pub seed: u64,
}

/// Number of distinct attribute combinations.
pub const SCENE_COMBINATIONS: usize = 3 * 8 * 4 * 4;

impl SceneSpec {
    /// Scene from a combination index in `0..SCENE_COMBINATIONS`.
    pub fn from_index(ix: usize, seed: u64) -> Result<Self> {
        if ix >= SCENE_COMBINATIONS {
            return Err(Error::InvalidParameter(format!(
                "scene index {ix} outside 0..{SCENE_COMBINATIONS}"
            )));
        }
        let shape = Shape::ALL[ix % 3];
        let color = (ix / 3) % 8;
        let quadrant = Quadrant::ALL[(ix / 24) % 4];
        let background = (ix / 96) % 4;
        Ok(Self { shape, color, quadrant, background, seed })
    }

    pub fn combination_index(&self) -> usize {
        let shape = Shape::ALL.iter().position(|s| s == &self.shape).unwrap();
        let quad = Quadrant::ALL.iter().position(|q| q == &self.quadrant).unwrap();
        shape + self.color * 3 + quad * 24 + self.background * 96
    }

    pub fn caption_text(&self) -> String {
        format!(
            "a {} {} in the {} on {}",
            FG_COLORS[self.color].0,
            self.shape.word(),
            self.quadrant.phrase(),
            BG_COLORS[self.background].0
        )
    }

    /// A stable sample id encoding the attributes and jitter seed.
    pub fn sample_id(&self) -> String {
        format!("scene-{:03}-{:04x}", self.combination_index(), self.seed)
    }
}

/// All 384 attribute combinations with a fixed jitter seed.
pub fn enumerate_scenes(seed: u64) -> Vec<SceneSpec> {
    (0..SCENE_COMBINATIONS)
        .map(|ix| SceneSpec::from_index(ix, seed).unwrap())
        .collect()
}

struct Geometry {
    cy: f64,
    cx: f64,
    extent: f64,
}

/// Jittered shape placement; always fully inside the spec's quadrant.
fn geometry(spec: &SceneSpec, image_size: usize) -> Geometry {
    let q = image_size as f64 / 2.0;
    let jitter = derive_seed(spec.seed, "scene-geometry", &[spec.combination_index() as u64]);
    let mut rng = rng_from_seed(jitter);
    let extent = q * (0.30 + 0.10 * rng.gen::<f64>());
    let span = q - 2.0 * extent;
    let cy_rel = extent + rng.gen::<f64>() * span;
    let cx_rel = extent + rng.gen::<f64>() * span;
    let (row, col) = spec.quadrant.cell();
    Geometry {
        cy: row as f64 * q + cy_rel,
        cx: col as f64 * q + cx_rel,
        extent,
    }
}

fn inside(shape: Shape, geom: &Geometry, y: f64, x: f64) -> bool {
    let dy = y - geom.cy;
    let dx = x - geom.cx;
    let e = geom.extent;
    match shape {
        Shape::Square => dy.abs() <= e && dx.abs() <= e,
        Shape::Circle => dy * dy + dx * dx <= e * e,
        Shape::Triangle => {
            // Apex at the top, base at the bottom of the bounding box.
            let from_apex = dy + e;
            if !(0.0..=2.0 * e).contains(&from_apex) {
                return false;
            }
            dx.abs() <= from_apex / 2.0
        }
    }
}

/// Deterministic flat-color render (no anti-aliasing) plus the caption.
pub fn generate(spec: &SceneSpec, image_size: usize) -> Result<(Caption, ImageTensor)> {
    if image_size < 8 {
        return Err(Error::InvalidParameter(format!("image size {image_size} too small")));
    }
    let geom = geometry(spec, image_size);
    let fg = FG_COLORS[spec.color].1;
    let bg = BG_COLORS[spec.background].1;
    let shape = spec.shape;
    let img = ImageTensor::from_fn(image_size, image_size, |y, x| {
        if inside(shape, &geom, y as f64 + 0.5, x as f64 + 0.5) {
            fg
        } else {
            bg
        }
    })?;
    let caption = Caption::parse(&spec.caption_text())?;
    Ok((caption, img))
}

/// Per-pixel foreground mask for the same render.
pub fn foreground_mask(spec: &SceneSpec, image_size: usize) -> Vec<bool> {
    let geom = geometry(spec, image_size);
    let mut mask = Vec::with_capacity(image_size * image_size);
    for y in 0..image_size {
        for x in 0..image_size {
            mask.push(inside(spec.shape, &geom, y as f64 + 0.5, x as f64 + 0.5));
        }
    }
    mask
}

/// Content words the synthetic captions are built from.
pub fn keyword_lexicon() -> Vec<String> {
    let mut words: Vec<String> = FG_COLORS.iter().map(|(n, _)| n.to_string()).collect();
    words.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
    words.extend(["top", "bottom", "left", "right"].iter().map(|s| s.to_string()));
    words.extend(BG_COLORS.iter().map(|(n, _)| n.to_string()));
    words
}

/// Palette the matcher is constructed over (colors plus coverage prototypes).
pub fn matcher_palette() -> MatcherPalette {
    MatcherPalette {
        fg_colors: FG_COLORS.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
        bg_colors: BG_COLORS.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
        shapes: Shape::ALL.iter().map(|s| (s.word().to_string(), s.coverage())).collect(),
    }
}

/// World dimensions and fitting parameters.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub codebook_size: usize,
    /// Jittered copies of each of the 384 scenes in the fitting corpus.
    pub jitter_seeds: u64,
    pub encoder_seed: u64,
    pub estimator_alpha: f64,
    pub prior_alpha: f64,
    pub kmeans_iters: usize,
    pub base_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            patch: PatchEncoder::DEFAULT_PATCH,
            dim: PatchEncoder::DEFAULT_DIM,
            codebook_size: Codebook::DEFAULT_K,
            jitter_seeds: 4,
            encoder_seed: PatchEncoder::DEFAULT_SEED,
            estimator_alpha: CountModel::DEFAULT_ALPHA,
            prior_alpha: CodePrior::DEFAULT_ALPHA,
            kmeans_iters: 20,
            base_seed: 0,
        }
    }
}

impl SynthConfig {
    /// A small world for fast tests: 64px images, 8px patches, 64 codes.
    pub fn small(base_seed: u64) -> Self {
        Self {
            image_size: 64,
            patch: 8,
            dim: 16,
            codebook_size: 64,
            jitter_seeds: 2,
            base_seed,
            ..Self::default()
        }
    }

    /// Corpus specs: every combination × every jitter seed.
    pub fn corpus_specs(&self) -> Vec<SceneSpec> {
        let mut specs = Vec::with_capacity(SCENE_COMBINATIONS * self.jitter_seeds as usize);
        for ix in 0..SCENE_COMBINATIONS {
            for j in 0..self.jitter_seeds {
                let seed = derive_seed(self.base_seed, "corpus-jitter", &[ix as u64, j]);
                specs.push(SceneSpec::from_index(ix, seed).unwrap());
            }
        }
        specs
    }

    /// A fresh evaluation scene outside the fitting corpus.
    pub fn eval_scene(&self, index: u64) -> SceneSpec {
        let ix = (derive_seed(self.base_seed, "eval-combo", &[index]) % SCENE_COMBINATIONS as u64) as usize;
        let seed = derive_seed(self.base_seed, "eval-jitter", &[index]);
        SceneSpec::from_index(ix, seed).unwrap()
    }
}

/// The full fitted reference stack.
pub struct SynthOracles {
    pub config: SynthConfig,
    pub encoder: PatchEncoder,
    pub codebook: Codebook,
    pub estimator: CountModel,
    pub prior: CodePrior,
    pub matcher: LinearMatcher,
}

/// Fits codebook, estimator, prior, and matcher on the full enumerated corpus.
pub fn build_oracles(cfg: &SynthConfig) -> Result<SynthOracles> {
    build_oracles_from_specs(&cfg.corpus_specs(), cfg)
}

/// Fits the oracle stack on an explicit scene list.
pub fn build_oracles_from_specs(specs: &[SceneSpec], cfg: &SynthConfig) -> Result<SynthOracles> {
    if specs.is_empty() {
        return Err(Error::EmptyInput("oracle fitting corpus".into()));
    }
    let encoder = PatchEncoder::seeded(cfg.patch, cfg.dim, cfg.encoder_seed)?;

    let encoded: Vec<Result<(Caption, Vec<f32>, usize, usize)>> = par::map_slice(specs, |spec| {
        let (caption, img) = generate(spec, cfg.image_size)?;
        let grid = encoder.encode(&img)?;
        let cells: Vec<f32> = grid.cells().flatten().copied().collect();
        Ok((caption, cells, grid.h(), grid.w()))
    });
    let mut captions = Vec::with_capacity(specs.len());
    let mut features = Vec::new();
    let mut grid_shape = (0usize, 0usize);
    for item in encoded {
        let (caption, cells, h, w) = item?;
        captions.push(caption);
        features.extend_from_slice(&cells);
        grid_shape = (h, w);
    }

    let kmeans_seed = derive_seed(cfg.base_seed, "codebook-kmeans", &[]);
    let centroids = kmeans(&features, cfg.dim, cfg.codebook_size, cfg.kmeans_iters, kmeans_seed);
    // Degenerate corpora can have fewer distinct patches than requested
    // codes; the fitted vocabulary is whatever k-means could separate.
    let codebook = Codebook::new(cfg.dim, centroids)?;
    let k = codebook.k();

    let (h, w) = grid_shape;
    let cells_per_grid = h * w * cfg.dim;
    let grids: Vec<Result<CodeGrid>> = par::map_indexed(specs.len(), |i| {
        let fg = crate::tokenizer::FeatureGrid::new(
            h,
            w,
            cfg.dim,
            features[i * cells_per_grid..(i + 1) * cells_per_grid].to_vec(),
        )?;
        quantize(&fg, &codebook)
    });
    let grids: Vec<CodeGrid> = grids.into_iter().collect::<Result<_>>()?;

    let corpus: Vec<(Caption, CodeGrid)> =
        captions.iter().cloned().zip(grids.iter().cloned()).collect();
    let estimator = CountModel::fit(&corpus, k, cfg.estimator_alpha)?;
    let prior = estimate_prior(&grids, k, cfg.prior_alpha)?;

    let matcher_seed = derive_seed(cfg.base_seed, "matcher-projection", &[]);
    let matcher = LinearMatcher::new(cfg.patch, matcher_palette(), MatcherParams::default(), matcher_seed)?;

    Ok(SynthOracles {
        config: cfg.clone(),
        encoder,
        codebook,
        estimator,
        prior,
        matcher,
    })
}
