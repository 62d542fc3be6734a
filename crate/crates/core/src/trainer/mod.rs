//! BCE loss, Adam and the mini-batch training loop.

mod adam;

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Identity, SplitSample};
use crate::features::EmbeddingSequence;
use crate::seqmodel::{self, init_params, Gradients, ModelDims, ModelError, ModelParams, Readout};

pub use adam::{adam_step, AdamState};

/// Probabilities are clamped into `[EPSILON, 1 - EPSILON]` before taking logs.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("length mismatch: {labels} labels, {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("empty input")]
    Empty,
    #[error("training set holds a single class ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient at {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no embedding for {0}")]
    MissingEmbedding(Identity),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Hook(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub gradient_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 60,
            batch_size: 75,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            gradient_clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return fail(format!("{name} must lie in [0, 1), got {beta}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return fail(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("gradient_clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce_loss(labels: &[f64], predictions: &[f64]) -> Result<f64, TrainError> {
    if labels.len() != predictions.len() {
        return Err(TrainError::LengthMismatch { labels: labels.len(), predictions: predictions.len() });
    }
    if labels.is_empty() {
        return Err(TrainError::Empty);
    }
    let total: f64 = labels
        .iter()
        .zip(predictions)
        .map(|(&y, &p)| {
            let p = p.clamp(EPSILON, 1.0 - EPSILON);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Source of model inputs keyed by utterance.
pub trait EmbeddingProvider: Sync {
    fn timesteps(&self) -> usize;
    fn width(&self) -> usize;
    /// Row-major `timesteps x width` values.
    fn get(&self, id: &Identity) -> Option<&[f32]>;
}

/// In-memory embeddings keyed by utterance.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    timesteps: usize,
    width: usize,
    values: HashMap<Identity, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(timesteps: usize, width: usize) -> Self {
        Self { timesteps, width, values: HashMap::new() }
    }

    pub fn insert(&mut self, seq: &EmbeddingSequence) -> Result<(), TrainError> {
        if (seq.timesteps, seq.width) != (self.timesteps, self.width) {
            return Err(TrainError::Shape(format!(
                "{} is {}x{}, store holds {}x{}",
                seq.identity, seq.timesteps, seq.width, self.timesteps, self.width
            )));
        }
        self.values.insert(seq.identity.clone(), seq.values.clone());
        Ok(())
    }

    pub fn from_sequences<'a>(
        timesteps: usize,
        width: usize,
        seqs: impl IntoIterator<Item = &'a EmbeddingSequence>,
    ) -> Result<Self, TrainError> {
        let mut store = Self::new(timesteps, width);
        for s in seqs {
            store.insert(s)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl EmbeddingProvider for EmbeddingStore {
    fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn width(&self) -> usize {
        self.width
    }

    fn get(&self, id: &Identity) -> Option<&[f32]> {
        self.values.get(id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per epoch. Wall time is included only when `timing`
    /// is set, so logs of identical runs compare byte for byte.
    pub fn to_jsonl(&self, timing: bool) -> String {
        let mut out = String::new();
        for record in &self.epochs {
            let mut r = record.clone();
            if !timing {
                r.seconds = None;
            }
            out.push_str(&serde_json::to_string(&r).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().filter_map(|e| e.seconds).sum()
    }
}

fn lookup<P: EmbeddingProvider>(provider: &P, s: &SplitSample) -> Result<Vec<f64>, TrainError> {
    provider
        .get(&s.identity)
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .ok_or_else(|| TrainError::MissingEmbedding(s.identity.clone()))
}

/// Probability for every sample, in order.
pub fn score_samples<P: EmbeddingProvider>(
    params: &ModelParams,
    samples: &[SplitSample],
    provider: &P,
) -> Result<Vec<f64>, TrainError> {
    let t = provider.timesteps();
    samples
        .par_iter()
        .map(|s| Ok(seqmodel::predict(params, &lookup(provider, s)?, t)?))
        .collect()
}

fn loss_and_accuracy(labels: &[f64], probs: &[f64]) -> Result<(f64, f64), TrainError> {
    let loss = bce_loss(labels, probs)?;
    let correct = labels.iter().zip(probs).filter(|(y, p)| (**p >= 0.5) == (**y == 1.0)).count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub dims: ModelDims,
    pub readout: Readout,
    pub init_seed: u64,
    pub config: TrainConfig,
}

/// Trains from a seeded initialization. `on_epoch` sees the parameters
/// after every completed epoch (used for checkpoints).
pub fn train<P: EmbeddingProvider>(
    samples: &[SplitSample],
    validation: Option<&[SplitSample]>,
    provider: &P,
    setup: &TrainSetup,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParams) -> Result<(), TrainError>,
) -> Result<(ModelParams, TrainLog), TrainError> {
    let cfg = &setup.config;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::Empty);
    }
    let positives = samples.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == samples.len() {
        return Err(TrainError::SingleClass { positives, negatives: samples.len() - positives });
    }
    if provider.width() != setup.dims.input {
        return Err(TrainError::Shape(format!(
            "embeddings are {} wide, model expects {}",
            provider.width(),
            setup.dims.input
        )));
    }
    let timesteps = provider.timesteps();
    if let Some(s) = samples.iter().find(|s| provider.get(&s.identity).is_none()) {
        return Err(TrainError::MissingEmbedding(s.identity.clone()));
    }
    let labels: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();

    let mut params = init_params(&setup.dims, setup.readout, setup.init_seed)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_labels = Vec::with_capacity(samples.len());
        let mut epoch_probs = Vec::with_capacity(samples.len());
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample: Vec<(Gradients, f64)> = chunk
                .par_iter()
                .map(|&i| {
                    let x = lookup(provider, &samples[i])?;
                    let trace = seqmodel::forward(&params, &x, timesteps)?;
                    let grads = seqmodel::backward(&params, &trace, &x, labels[i])?;
                    Ok((grads, trace.probability))
                })
                .collect::<Result<_, TrainError>>()?;
            // Fixed-order reduction keeps results independent of the worker count.
            let mut grads = Gradients::zeros_like(&params);
            for (k, (g, p)) in per_sample.iter().enumerate() {
                grads.add_assign(g);
                epoch_labels.push(labels[chunk[k]]);
                epoch_probs.push(*p);
            }
            grads.scale(1.0 / chunk.len() as f64);
            let batch_labels: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let batch_probs: Vec<f64> = per_sample.iter().map(|(_, p)| *p).collect();
            if !bce_loss(&batch_labels, &batch_probs)?.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch });
            }
            adam_step(&mut params, &grads, &mut adam, cfg)?;
        }
        let (loss, accuracy) = loss_and_accuracy(&epoch_labels, &epoch_probs)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        let (validation_loss, validation_accuracy) = match validation {
            Some(v) if !v.is_empty() => {
                let probs = score_samples(&params, v, provider)?;
                let ys: Vec<f64> = v.iter().map(|s| f64::from(s.label)).collect();
                let (l, a) = loss_and_accuracy(&ys, &probs)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            loss,
            accuracy,
            seconds: Some(started.elapsed().as_secs_f64()),
            validation_loss,
            validation_accuracy,
        };
        on_epoch(&record, &params)?;
        log.epochs.push(record);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let perfect = bce_loss(&[1.0], &[1.0 - EPSILON]).unwrap();
        assert!(perfect >= 0.0 && perfect <= 1.1e-7);
        let half = bce_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let mixed = bce_loss(&[1.0, 0.0, 1.0], &[0.9, 0.2, 0.8]).unwrap();
        // -(ln 0.9 + ln 0.8 + ln 0.8) / 3
        let expected = -(0.9f64.ln() + 0.8f64.ln() + 0.8f64.ln()) / 3.0;
        assert!((mixed - expected).abs() < 1e-15);
        assert!((mixed - 0.18388).abs() < 1e-5);
    }

    #[test]
    fn bce_clamps_extremes_and_checks_lengths() {
        assert!(bce_loss(&[1.0], &[0.0]).unwrap().is_finite());
        assert!(matches!(bce_loss(&[1.0, 0.0], &[0.5]), Err(TrainError::LengthMismatch { .. })));
        assert!(matches!(bce_loss(&[], &[]), Err(TrainError::Empty)));
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { adam_beta1: 1.0, ..Default::default() },
            TrainConfig { adam_beta2: -0.1, ..Default::default() },
            TrainConfig { gradient_clip_norm: Some(0.0), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))), "{bad:?}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bce_is_nonnegative_and_order_free(
                data in proptest::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..40),
                rotate in 0usize..40,
            ) {
                let ys: Vec<f64> = data.iter().map(|(y, _)| f64::from(u8::from(*y))).collect();
                let ps: Vec<f64> = data.iter().map(|(_, p)| *p).collect();
                let loss = bce_loss(&ys, &ps).unwrap();
                prop_assert!(loss >= 0.0);
                let k = rotate % ys.len();
                let mut ys2 = ys.clone();
                let mut ps2 = ps.clone();
                ys2.rotate_left(k);
                ps2.rotate_left(k);
                ys2.reverse();
                ps2.reverse();
                prop_assert!((bce_loss(&ys2, &ps2).unwrap() - loss).abs() <= 1e-12 * loss.max(1.0));
            }
        }
    }
}
