//! Likelihood-based text-to-image evaluation with patch-level credit
//! assignment.
//!
//! The score of a (caption, image) pair combines three per-patch signals:
//!
//! 1. **Likelihood** — the image is tokenized into a grid of visual codes and
//!    a likelihood backend supplies ln P(code | previous codes, caption) for
//!    every position in a single teacher-forced pass ([`likelihood`]).
//! 2. **Perceptual credit** — a threshold function zeroes out codes that are
//!    implausibly rare either under the backend or under an empirical code
//!    prior, so a few outlier codes cannot dominate the total ([`perceptual`]).
//! 3. **Semantic credit** — a matcher scores how much each patch has to do
//!    with the caption; scores are resized to the code grid, clipped at zero,
//!    and scaled by a global-alignment factor ([`semantic`]).
//!
//! The final score is the mean over code positions of the product of the two
//! credit maps ([`metric`]). Distortion generation ([`perturb`]), judgment
//! statistics ([`metaeval`]), and a fully enumerable synthetic text-image
//! world with fitted oracle models ([`synthworld`]) make the whole pipeline
//! testable without any pretrained checkpoint.
//!
//! Batch scoring and fitting fan out over rayon when the `parallel` feature
//! (default) is enabled and fall back to plain iterators without it; outputs
//! are byte-identical either way.

pub mod caption;
pub mod error;
pub mod image;
pub mod kmeans;
pub mod likelihood;
pub mod manifest;
pub mod metaeval;
pub mod metric;
mod par;
pub mod perceptual;
pub mod perturb;
pub mod rng;
pub mod semantic;
pub mod synthworld;
pub mod tokenizer;

pub use caption::Caption;
pub use error::{Error, Result};
pub use image::ImageTensor;
