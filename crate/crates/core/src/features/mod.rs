//! Per-frame embeddings, the on-disk embedding cache and cosine analysis.

pub mod cache;
mod extract;
mod variation;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::Identity;

pub use cache::{cache_file_name, cache_path, cache_read, cache_read_checked, cache_write};
pub use extract::{extract_sequence, ExtractorBackend, Projection, ProjectionParams};
pub use variation::{variation_report, VariationCell, VariationReport};

/// Width of the face-descriptor vectors the pipeline is shaped around.
pub const DEFAULT_WIDTH: usize = 2622;

/// A `timesteps x width` feature matrix for one utterance, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSequence {
    pub identity: Identity,
    pub timesteps: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub extractor_tag: String,
}

impl EmbeddingSequence {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.width..(t + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.width.max(1))
    }

    /// Values widened to f64, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub(crate) fn check(&self) -> Result<(), FeatureError> {
        if self.timesteps == 0 || self.width == 0 {
            return Err(FeatureError::Shape(format!(
                "{} has empty shape {}x{}",
                self.identity, self.timesteps, self.width
            )));
        }
        if self.values.len() != self.timesteps * self.width {
            return Err(FeatureError::Shape(format!(
                "{} holds {} values for shape {}x{}",
                self.identity,
                self.values.len(),
                self.timesteps,
                self.width
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(format!(
                "{} at timestep {}, feature {}",
                self.identity,
                i / self.width,
                i % self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no cached embedding for {identity} at {path}")]
    CacheMiss { identity: Identity, path: PathBuf },
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found}, expected {expected}")]
    Version { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("need at least two sequences, got {0}")]
    TooFewSequences(usize),
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, FeatureError> {
    if a.len() != b.len() {
        return Err(FeatureError::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(FeatureError::ZeroNorm);
    }
    Ok((dot / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_norm_and_length_mismatch() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(FeatureError::ZeroNorm)));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 1.0]), Err(FeatureError::Shape(_))));
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1e3f64..1e3, 1..32)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-6))
    }

    proptest! {
        #[test]
        fn self_similarity_is_one(a in nonzero_vec(), c in 1e-3f64..1e3) {
            prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            prop_assert!((cosine_similarity(&a, &scaled).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_and_bounded(
            (a, b) in (1usize..24).prop_flat_map(|n| (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )).prop_filter("nonzero", |(a, b)| a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0))
        ) {
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
