use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Identity};
use crate::features::EmbeddingSequence;

/// Shape and noise of a synthetic speaker x word x take corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub num_words: usize,
    pub num_takes: u32,
    pub timesteps: usize,
    pub width: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_speakers: 10,
            num_words: 10,
            num_takes: 10,
            timesteps: super::DEFAULT_TIMESTEPS,
            width: crate::features::DEFAULT_WIDTH,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

pub fn speaker_name(index: usize) -> String {
    format!("s{index}")
}

pub fn word_name(index: usize) -> String {
    format!("w{index}")
}

/// Generates embeddings `speaker[s] + word[w][t] + noise` with standard
/// normal speaker vectors and word trajectories and `N(0, noise_scale^2)`
/// noise. Output is ordered by (speaker, word, take) and is a pure function
/// of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<EmbeddingSequence>, DatasetError> {
    let positive = [
        ("num_speakers", spec.num_speakers),
        ("num_words", spec.num_words),
        ("num_takes", spec.num_takes as usize),
        ("timesteps", spec.timesteps),
        ("width", spec.width),
    ];
    if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
        return Err(DatasetError::InvalidParameter(format!("{name} must be at least 1")));
    }
    if !(spec.noise_scale >= 0.0 && spec.noise_scale.is_finite()) {
        return Err(DatasetError::InvalidParameter(format!(
            "noise_scale must be finite and non-negative, got {}",
            spec.noise_scale
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gaussian = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let speakers: Vec<Vec<f64>> = (0..spec.num_speakers).map(|_| gaussian(spec.width)).collect();
    let words: Vec<Vec<f64>> =
        (0..spec.num_words).map(|_| gaussian(spec.timesteps * spec.width)).collect();

    let tag = format!(
        "synthetic:v1:seed={}:noise={}:{}x{}x{}",
        spec.seed, spec.noise_scale, spec.num_speakers, spec.num_words, spec.num_takes
    );
    let mut out = Vec::with_capacity(spec.num_speakers * spec.num_words * spec.num_takes as usize);
    for (s, speaker) in speakers.iter().enumerate() {
        for (w, word) in words.iter().enumerate() {
            for take in 0..spec.num_takes {
                let noise = gaussian(spec.timesteps * spec.width);
                let values = word
                    .chunks_exact(spec.width)
                    .zip(noise.chunks_exact(spec.width))
                    .flat_map(|(w_t, e_t)| {
                        speaker
                            .iter()
                            .zip(w_t)
                            .zip(e_t)
                            .map(|((s, w), e)| (s + w + spec.noise_scale * e) as f32)
                    })
                    .collect();
                out.push(EmbeddingSequence {
                    identity: Identity::new(speaker_name(s), word_name(w), take),
                    timesteps: spec.timesteps,
                    width: spec.width,
                    values,
                    extractor_tag: tag.clone(),
                });
            }
        }
    }
    Ok(out)
}
