use serde::{Deserialize, Serialize};

use super::{cosine_similarity, EmbeddingSequence, FeatureError};
use crate::dataset::{categorize, ImposterCategory, WordPair};

/// Mean cosine similarity between sequences of two categories, compared
/// row by row at equal timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationCell {
    pub first: ImposterCategory,
    pub second: ImposterCategory,
    /// Number of sequence pairs averaged.
    pub pairs: usize,
    pub per_timestep: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub target: WordPair,
    pub timesteps: usize,
    /// One cell per category pair that has at least one sequence pair.
    pub cells: Vec<VariationCell>,
}

impl VariationReport {
    pub fn cell(&self, a: ImposterCategory, b: ImposterCategory) -> Option<&VariationCell> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.cells.iter().find(|c| c.first == a && c.second == b)
    }
}

pub fn variation_report(
    embeddings: &[EmbeddingSequence],
    target: &WordPair,
) -> Result<VariationReport, FeatureError> {
    if embeddings.len() < 2 {
        return Err(FeatureError::TooFewSequences(embeddings.len()));
    }
    let (timesteps, width) = (embeddings[0].timesteps, embeddings[0].width);
    for e in embeddings {
        e.check()?;
        if (e.timesteps, e.width) != (timesteps, width) {
            return Err(FeatureError::Shape(format!(
                "{} is {}x{}, expected {timesteps}x{width}",
                e.identity, e.timesteps, e.width
            )));
        }
    }
    let rows: Vec<(ImposterCategory, Vec<f64>)> = embeddings
        .iter()
        .map(|e| (categorize(&e.identity, target), e.to_f64()))
        .collect();

    let mut cells = Vec::new();
    for (ai, &a) in ImposterCategory::ALL.iter().enumerate() {
        for &b in &ImposterCategory::ALL[ai..] {
            let mut sums = vec![0.0; timesteps];
            let mut pairs = 0usize;
            for (i, (ca, va)) in rows.iter().enumerate() {
                for (j, (cb, vb)) in rows.iter().enumerate() {
                    let wanted = if a == b { *ca == a && *cb == b && i < j } else { *ca == a && *cb == b };
                    if !wanted {
                        continue;
                    }
                    for (t, sum) in sums.iter_mut().enumerate() {
                        let span = t * width..(t + 1) * width;
                        *sum += cosine_similarity(&va[span.clone()], &vb[span])?;
                    }
                    pairs += 1;
                }
            }
            if pairs == 0 {
                continue;
            }
            let per_timestep: Vec<f64> = sums.iter().map(|s| s / pairs as f64).collect();
            let mean = per_timestep.iter().sum::<f64>() / timesteps as f64;
            cells.push(VariationCell { first: a, second: b, pairs, per_timestep, mean });
        }
    }
    Ok(VariationReport { target: target.clone(), timesteps, cells })
}
