//! Data-free spectral fingerprints for transformer lineage verification.
//!
//! The pipeline: parse checkpoint weights, form the per-layer invariant
//! attention products `Wqᵀ·Wk` and `Wo·Wv`, take their singular value
//! spectra, compare two models through an effective-rank-truncated distance
//! matrix, align layers with a penalty-based dynamic program, and map the
//! aligned distance into similarity scores (`mse` via an inverted sigmoid,
//! `corr` via distance correlation of layer-wise spectral trends).
//!
//! The products are invariant under functionality-preserving weight rewrites
//! (per-head rotation/scaling of Q-K, block-diagonal change of basis on V-O,
//! hidden-dimension permutations), which is what makes the fingerprint robust
//! where raw per-projection spectra are not. [`transforms`] generates exactly
//! those rewrites, plus synthetic model families, so every invariance claim
//! is testable from bytes up without real checkpoints.

pub mod alignment;
pub mod error;
pub mod evalkit;
pub mod fingerprint;
pub mod matrix;
pub mod similarity;
pub mod spectral;
pub mod transforms;
pub mod weights;

pub use error::{Error, Result};
pub use matrix::WeightMatrix;
