//! Image tokenization: patch features, codebook lookup, code grids.
//!
//! An image is cut into non-overlapping p×p blocks, each block is mapped to a
//! d-dimensional feature by a fixed linear [`PatchEncoder`], and each feature
//! is replaced by the index of its nearest codebook row (squared Euclidean
//! distance, ties to the lowest index). The resulting [`CodeGrid`] is the
//! sequence scored by the likelihood stage; flattening is row-major, so the
//! code at grid cell (row, col) has flattened position `row * w + col`.
//!
//! ## Codebook file format
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   6 bytes  "LEICB1"
//! k       u32      number of codes
//! dim     u32      feature dimension
//! vectors k*dim f32, row-major
//! hash    8 bytes  content hash (SHA-256 prefix of everything above)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::par;
use crate::rng::{content_hash, rng_from_seed, sample_standard_normal};

pub const CODEBOOK_MAGIC: &[u8; 6] = b"LEICB1";

/// Fixed linear map from a flattened p×p×3 pixel block to a d-dim feature.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    patch: usize,
    dim: usize,
    /// dim × (patch*patch*3), row-major.
    weights: Vec<f32>,
}

impl PatchEncoder {
    /// Default patch side length.
    pub const DEFAULT_PATCH: usize = 16;
    /// Default feature dimension.
    pub const DEFAULT_DIM: usize = 32;
    /// Default weight seed, shared by the CLI so that independently built
    /// tools agree on the encoder without a weights file.
    pub const DEFAULT_SEED: u64 = 0x4c45_4943_41;

    /// Seeded random orthogonal projection. Rows are orthonormal, so the map
    /// is an isometry onto its range and identical across runs for a seed.
    pub fn seeded(patch: usize, dim: usize, seed: u64) -> Result<Self> {
        let input = patch * patch * 3;
        if patch == 0 || dim == 0 {
            return Err(Error::InvalidParameter("patch and dim must be positive".into()));
        }
        if dim > input {
            return Err(Error::InvalidParameter(format!(
                "feature dim {dim} exceeds patch block size {input}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while rows.len() < dim {
            let mut row: Vec<f64> = (0..input).map(|_| sample_standard_normal(&mut rng)).collect();
            // Gram-Schmidt against accepted rows; redraw on near-degeneracy.
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
        let weights = rows.into_iter().flatten().map(|v| v as f32).collect();
        Ok(Self { patch, dim, weights })
    }

    /// Encoder with explicit weights (dim × patch*patch*3, row-major).
    pub fn from_weights(patch: usize, dim: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != dim * patch * patch * 3 {
            return Err(Error::DimensionMismatch(format!(
                "encoder weights: expected {} values, got {}",
                dim * patch * patch * 3,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("encoder weights must be finite".into()));
        }
        Ok(Self { patch, dim, weights })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Maps an image to an h×w grid of features, h = H/p, w = W/p.
    pub fn encode(&self, img: &ImageTensor) -> Result<FeatureGrid> {
        if img.height() % self.patch != 0 || img.width() % self.patch != 0 {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} not divisible by patch {}",
                img.height(),
                img.width(),
                self.patch
            )));
        }
        let h = img.height() / self.patch;
        let w = img.width() / self.patch;
        let block_len = self.patch * self.patch * 3;
        let features = par::map_indexed(h * w, |cell| {
            let row = cell / w;
            let col = cell % w;
            let mut block = Vec::with_capacity(block_len);
            for py in 0..self.patch {
                for px in 0..self.patch {
                    let p = img.pixel(row * self.patch + py, col * self.patch + px);
                    block.extend_from_slice(&p);
                }
            }
            let mut out = vec![0.0f32; self.dim];
            for (d, slot) in out.iter_mut().enumerate() {
                let wrow = &self.weights[d * block_len..(d + 1) * block_len];
                let mut acc = 0.0f64;
                for (wv, bv) in wrow.iter().zip(&block) {
                    acc += *wv as f64 * *bv as f64;
                }
                *slot = acc as f32;
            }
            out
        });
        Ok(FeatureGrid {
            h,
            w,
            dim: self.dim,
            data: features.into_iter().flatten().collect(),
        })
    }
}

/// h×w grid of d-dim features, row-major cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    h: usize,
    w: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * dim {
            return Err(Error::DimensionMismatch(format!(
                "feature grid: expected {} values, got {}",
                h * w * dim,
                data.len()
            )));
        }
        Ok(Self { h, w, dim, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// K×d codebook with a content hash identifying it in downstream artifacts.
#[derive(Debug, Clone)]
pub struct Codebook {
    k: usize,
    dim: usize,
    /// K × dim, row-major.
    vectors: Vec<f32>,
    id: u64,
}

impl Codebook {
    pub const DEFAULT_K: usize = 512;

    pub fn new(dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || vectors.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "codebook: {} values do not form rows of dim {}",
                vectors.len(),
                dim
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("codebook vectors must be finite".into()));
        }
        let k = vectors.len() / dim;
        for a in 0..k {
            for b in a + 1..k {
                if vectors[a * dim..(a + 1) * dim] == vectors[b * dim..(b + 1) * dim] {
                    return Err(Error::InvalidParameter(format!(
                        "codebook rows {a} and {b} are identical"
                    )));
                }
            }
        }
        let id = Self::hash_payload(k, dim, &vectors);
        Ok(Self { k, dim, vectors, id })
    }

    fn hash_payload(k: usize, dim: usize, vectors: &[f32]) -> u64 {
        let mut payload = Vec::with_capacity(14 + vectors.len() * 4);
        payload.extend_from_slice(CODEBOOK_MAGIC);
        payload.extend_from_slice(&(k as u32).to_le_bytes());
        payload.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in vectors {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        content_hash(&payload)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn row(&self, code: usize) -> &[f32] {
        &self.vectors[code * self.dim..(code + 1) * self.dim]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CODEBOOK_MAGIC)?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.vectors {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.id.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(Error::Format(format!("bad codebook magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let k = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut vectors = vec![0.0f32; k * dim];
        let mut f32buf = [0u8; 4];
        for v in vectors.iter_mut() {
            r.read_exact(&mut f32buf)?;
            *v = f32::from_le_bytes(f32buf);
        }
        let mut hash = [0u8; 8];
        r.read_exact(&mut hash)?;
        let stored = u64::from_le_bytes(hash);
        let cb = Self::new(dim, vectors)?;
        if cb.id != stored {
            return Err(Error::Format(format!(
                "codebook hash mismatch: stored {stored:#018x}, computed {:#018x}",
                cb.id
            )));
        }
        Ok(cb)
    }
}

/// h×w grid of code indices produced under a specific codebook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGrid {
    h: usize,
    w: usize,
    codes: Vec<u32>,
    codebook_id: u64,
}

impl CodeGrid {
    pub fn new(h: usize, w: usize, codes: Vec<u32>, codebook_id: u64) -> Result<Self> {
        if codes.len() != h * w || codes.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "code grid: expected {} codes, got {}",
                h * w,
                codes.len()
            )));
        }
        Ok(Self { h, w, codes, codebook_id })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// Total number of codes, m = h·w.
    pub fn m(&self) -> usize {
        self.codes.len()
    }

    /// Row-major flattened codes; position t maps to cell (t / w, t % w).
    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn codebook_id(&self) -> u64 {
        self.codebook_id
    }
}

/// Replaces each feature cell with its nearest codebook row.
///
/// Distance is squared Euclidean accumulated in f64; ties break to the lowest
/// code index.
pub fn quantize(features: &FeatureGrid, cb: &Codebook) -> Result<CodeGrid> {
    if features.dim() != cb.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dim {} vs codebook dim {}",
            features.dim(),
            cb.dim()
        )));
    }
    let codes = par::map_indexed(features.h() * features.w(), |t| {
        nearest_code(features.cell(t), cb)
    });
    CodeGrid::new(features.h(), features.w(), codes, cb.id())
}

fn nearest_code(feature: &[f32], cb: &Codebook) -> u32 {
    let mut best = 0u32;
    let mut best_dist = f64::INFINITY;
    for code in 0..cb.k() {
        let row = cb.row(code);
        let mut dist = 0.0f64;
        for (f, r) in feature.iter().zip(row) {
            let d = (*f - *r) as f64;
            dist += d * d;
        }
        if dist < best_dist {
            best_dist = dist;
            best = code as u32;
        }
    }
    best
}

/// Renders one pixel block per code: the mean of all training blocks that
/// quantized to it.
#[derive(Debug, Clone)]
pub struct MeanPatchDecoder {
    patch: usize,
    /// K × (patch*patch*3), row-major.
    blocks: Vec<f32>,
    codebook_id: u64,
}

impl MeanPatchDecoder {
    /// Accumulates per-code mean pixel blocks over a training set. Codes that
    /// never occur decode to mid-gray.
    pub fn fit(images: &[ImageTensor], enc: &PatchEncoder, cb: &Codebook) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyInput("decoder training set".into()));
        }
        let block_len = enc.patch() * enc.patch() * 3;
        let mut sums = vec![0.0f64; cb.k() * block_len];
        let mut counts = vec![0u64; cb.k()];
        for img in images {
            let features = enc.encode(img)?;
            let grid = quantize(&features, cb)?;
            let w = grid.w();
            for (t, code) in grid.codes().iter().enumerate() {
                let row = t / w;
                let col = t % w;
                counts[*code as usize] += 1;
                let base = *code as usize * block_len;
                let mut i = 0;
                for py in 0..enc.patch() {
                    for px in 0..enc.patch() {
                        let p = img.pixel(row * enc.patch() + py, col * enc.patch() + px);
                        sums[base + i] += p[0] as f64;
                        sums[base + i + 1] += p[1] as f64;
                        sums[base + i + 2] += p[2] as f64;
                        i += 3;
                    }
                }
            }
        }
        let mut blocks = vec![0.5f32; cb.k() * block_len];
        for code in 0..cb.k() {
            if counts[code] == 0 {
                continue;
            }
            let base = code * block_len;
            for i in 0..block_len {
                blocks[base + i] = (sums[base + i] / counts[code] as f64) as f32;
            }
        }
        Ok(Self { patch: enc.patch(), blocks, codebook_id: cb.id() })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Renders a code grid back to pixels, one mean block per cell.
    pub fn decode(&self, grid: &CodeGrid) -> Result<ImageTensor> {
        if grid.codebook_id() != self.codebook_id {
            return Err(Error::CodebookMismatch {
                expected: self.codebook_id,
                got: grid.codebook_id(),
            });
        }
        let block_len = self.patch * self.patch * 3;
        let height = grid.h() * self.patch;
        let width = grid.w() * self.patch;
        let mut data = vec![0.0f32; height * width * 3];
        for (t, code) in grid.codes().iter().enumerate() {
            let row = t / grid.w();
            let col = t % grid.w();
            let block = &self.blocks[*code as usize * block_len..(*code as usize + 1) * block_len];
            let mut i = 0;
            for py in 0..self.patch {
                for px in 0..self.patch {
                    let y = row * self.patch + py;
                    let x = col * self.patch + px;
                    let base = (y * width + x) * 3;
                    data[base] = block[i].clamp(0.0, 1.0);
                    data[base + 1] = block[i + 1].clamp(0.0, 1.0);
                    data[base + 2] = block[i + 2].clamp(0.0, 1.0);
                    i += 3;
                }
            }
        }
        ImageTensor::new(height, width, data)
    }
}

/// Encode, quantize, and re-render an image through the mean-patch decoder.
///
/// This is the model-based distortion: output quality degrades as the
/// codebook shrinks.
pub fn roundtrip_distort(
    img: &ImageTensor,
    enc: &PatchEncoder,
    cb: &Codebook,
    dec: &MeanPatchDecoder,
) -> Result<ImageTensor> {
    let features = enc.encode(img)?;
    let grid = quantize(&features, cb)?;
    dec.decode(&grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |y, x| {
            [
                y as f32 / h as f32,
                x as f32 / w as f32,
                ((x + y) % 7) as f32 / 7.0,
            ]
        })
        .unwrap()
    }

    #[test]
    fn encode_grid_shape_matches_patching() {
        let enc = PatchEncoder::seeded(16, 8, 1).unwrap();
        let img = gradient_image(256, 256);
        let grid = enc.encode(&img).unwrap();
        assert_eq!((grid.h(), grid.w(), grid.dim()), (16, 16, 8));
    }

    #[test]
    fn encode_rejects_non_divisible_dimensions() {
        let enc = PatchEncoder::seeded(16, 8, 1).unwrap();
        let img = gradient_image(250, 256);
        assert!(matches!(enc.encode(&img), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn identity_sum_encoder_sums_the_block() {
        let weights = vec![1.0f32; 8 * 8 * 3];
        let enc = PatchEncoder::from_weights(8, 1, weights).unwrap();
        let img = ImageTensor::filled(8, 8, [0.5, 0.5, 0.5]).unwrap();
        let grid = enc.encode(&img).unwrap();
        assert_eq!((grid.h(), grid.w()), (1, 1));
        let expected = 0.5 * 8.0 * 8.0 * 3.0;
        assert!((grid.cell(0)[0] - expected).abs() < 1e-4);
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = PatchEncoder::seeded(8, 16, 9).unwrap();
        let img = gradient_image(64, 64);
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_rows_are_orthonormal() {
        let enc = PatchEncoder::seeded(8, 16, 42).unwrap();
        let input = 8 * 8 * 3;
        for a in 0..16 {
            for b in a..16 {
                let dot: f64 = (0..input)
                    .map(|i| enc.weights[a * input + i] as f64 * enc.weights[b * input + i] as f64)
                    .sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-5, "rows {a},{b}: {dot}");
            }
        }
    }

    fn small_codebook() -> Codebook {
        let mut rng = rng_from_seed(5);
        let vectors: Vec<f32> = (0..16 * 4)
            .map(|_| sample_standard_normal(&mut rng) as f32)
            .collect();
        Codebook::new(4, vectors).unwrap()
    }

    #[test]
    fn quantize_single_code_maps_everything_to_zero() {
        let cb = Codebook::new(2, vec![0.3, -0.7]).unwrap();
        let features = FeatureGrid::new(2, 2, 2, vec![1.0, 2.0, -3.0, 0.0, 9.0, 9.0, 0.3, -0.7]).unwrap();
        let grid = quantize(&features, &cb).unwrap();
        assert_eq!(grid.codes(), &[0, 0, 0, 0]);
    }

    #[test]
    fn quantize_exact_row_match_returns_its_index() {
        let cb = small_codebook();
        let row3: Vec<f32> = cb.row(3).to_vec();
        let features = FeatureGrid::new(1, 1, 4, row3).unwrap();
        let grid = quantize(&features, &cb).unwrap();
        assert_eq!(grid.codes(), &[3]);
    }

    #[test]
    fn quantize_matches_exhaustive_scan() {
        let cb = small_codebook();
        let mut rng = rng_from_seed(77);
        let features_raw: Vec<f32> = (0..16 * 4)
            .map(|_| sample_standard_normal(&mut rng) as f32)
            .collect();
        let features = FeatureGrid::new(4, 4, 4, features_raw).unwrap();
        let grid = quantize(&features, &cb).unwrap();
        // Independent route: classify by scanning every (cell, code) pair and
        // keeping the first index attaining the minimum distance.
        for t in 0..16 {
            let cell = features.cell(t);
            let mut dists: Vec<(usize, f64)> = (0..cb.k())
                .map(|c| {
                    let d: f64 = cell
                        .iter()
                        .zip(cb.row(c))
                        .map(|(a, b)| ((*a - *b) as f64).powi(2))
                        .sum();
                    (c, d)
                })
                .collect();
            dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(grid.codes()[t], dists[0].0 as u32, "cell {t}");
        }
    }

    #[test]
    fn quantize_ties_break_to_lowest_index() {
        // Two codes equidistant from the origin feature.
        let cb = Codebook::new(1, vec![1.0, -1.0]).unwrap();
        let features = FeatureGrid::new(1, 1, 1, vec![0.0]).unwrap();
        let grid = quantize(&features, &cb).unwrap();
        assert_eq!(grid.codes(), &[0]);
    }

    #[test]
    fn quantizing_codebook_rows_is_the_identity_permutation() {
        let cb = small_codebook();
        let flat: Vec<f32> = (0..cb.k()).flat_map(|c| cb.row(c).to_vec()).collect();
        let features = FeatureGrid::new(4, 4, 4, flat).unwrap();
        let grid = quantize(&features, &cb).unwrap();
        let expected: Vec<u32> = (0..16).collect();
        assert_eq!(grid.codes(), &expected[..]);
    }

    #[test]
    fn permuting_codebook_rows_permutes_indices() {
        let cb = small_codebook();
        let mut rng = rng_from_seed(123);
        let features_raw: Vec<f32> = (0..8 * 4)
            .map(|_| sample_standard_normal(&mut rng) as f32)
            .collect();
        let features = FeatureGrid::new(2, 4, 4, features_raw).unwrap();
        let base = quantize(&features, &cb).unwrap();

        // Reverse the rows; index i becomes k-1-i.
        let reversed: Vec<f32> = (0..cb.k())
            .rev()
            .flat_map(|c| cb.row(c).to_vec())
            .collect();
        let cb_rev = Codebook::new(4, reversed).unwrap();
        let perm = quantize(&features, &cb_rev).unwrap();
        for (a, b) in base.codes().iter().zip(perm.codes()) {
            assert_eq!(cb.k() as u32 - 1 - *a, *b);
        }
    }

    #[test]
    fn duplicate_codebook_rows_are_rejected() {
        assert!(Codebook::new(2, vec![1.0, 2.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn codebook_file_round_trip() {
        let cb = small_codebook();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.bin");
        cb.write(&path).unwrap();
        let back = Codebook::read(&path).unwrap();
        assert_eq!(back.id(), cb.id());
        assert_eq!(back.k(), cb.k());
        assert_eq!(back.row(7), cb.row(7));
    }

    #[test]
    fn corrupt_codebook_is_rejected() {
        let cb = small_codebook();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.bin");
        cb.write(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Codebook::read(&path), Err(Error::Format(_)) | Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn roundtrip_with_one_code_renders_identical_patches() {
        let enc = PatchEncoder::seeded(8, 4, 2).unwrap();
        let img = gradient_image(32, 32);
        let features = enc.encode(&img).unwrap();
        let cb = Codebook::new(4, features.cell(0).to_vec()).unwrap();
        let dec = MeanPatchDecoder::fit(std::slice::from_ref(&img), &enc, &cb).unwrap();
        let out = roundtrip_distort(&img, &enc, &cb, &dec).unwrap();
        // Every 8x8 block must equal the block at (0,0).
        for by in 0..4 {
            for bx in 0..4 {
                for py in 0..8 {
                    for px in 0..8 {
                        assert_eq!(
                            out.pixel(by * 8 + py, bx * 8 + px),
                            out.pixel(py, px),
                            "block ({by},{bx})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn roundtrip_error_shrinks_with_more_codes() {
        let enc = PatchEncoder::seeded(8, 12, 3).unwrap();
        // Train-and-evaluate on a small synthetic corpus of block images.
        let images: Vec<ImageTensor> = (0..24)
            .map(|i| {
                ImageTensor::from_fn(32, 32, |y, x| {
                    let v = (((x / 8 + y / 8 + i) % 4) as f32) / 3.0;
                    [v, 1.0 - v, (i % 5) as f32 / 4.0]
                })
                .unwrap()
            })
            .collect();
        let all_features: Vec<Vec<f32>> = images
            .iter()
            .flat_map(|img| {
                let g = enc.encode(img).unwrap();
                (0..g.h() * g.w()).map(|t| g.cell(t).to_vec()).collect::<Vec<_>>()
            })
            .collect();
        let mse_for_k = |k: usize| -> f64 {
            let flat: Vec<f32> = all_features.iter().flatten().copied().collect();
            let centroids = crate::kmeans::kmeans(&flat, 12, k, 20, 99);
            let cb = Codebook::new(12, centroids).unwrap();
            let dec = MeanPatchDecoder::fit(&images, &enc, &cb).unwrap();
            images
                .iter()
                .map(|img| {
                    let out = roundtrip_distort(img, &enc, &cb, &dec).unwrap();
                    img.mse(&out).unwrap()
                })
                .sum::<f64>()
                / images.len() as f64
        };
        let coarse = mse_for_k(2);
        let fine = mse_for_k(16);
        assert!(
            fine < coarse,
            "expected richer codebook to reconstruct better: k=2 {coarse} vs k=16 {fine}"
        );
    }
}
