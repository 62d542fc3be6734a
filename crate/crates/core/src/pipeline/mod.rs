//! Config-driven composition of the modules: every command reads and writes
//! files under `out/` so stages can be rerun independently.

mod config;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    BackendKind, DatasetSection, EvalSection, FeaturesSection, ModelSection, PipelineConfig,
    SplitSection, SynthSection, TrainSection,
};
pub use sweep::{row_line as sweep_row_line, run_sweep, SweepReport, SweepRow};

use crate::dataset::{
    build_splits, generate_synthetic, load_manifest, preprocess_frames, preprocess_sequence,
    resolve_holdouts, write_manifest, DatasetError, DatasetSplit, FrameSource, Identity, ImposterCategory,
    Provenance, SplitPlan, SplitSample, SyntheticSpec, UtteranceRecord, WordPair,
};
use crate::features::{
    self, cache_path, cache_read_checked, cache_write, extract_sequence, variation_report,
    EmbeddingSequence, ExtractorBackend, FeatureError, ProjectionParams, VariationReport,
};
use crate::metrics::{choose_threshold, roc_curve, EvalReport, MetricError, RocCurve, ScoredSample};
use crate::seqmodel::{self, load_model, save_model, ModelDims, ModelError, ModelParams};
use crate::trainer::{self, score_samples, EmbeddingStore, TrainError, TrainLog, TrainSetup};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {what} at {path} (run `{produced_by}` first)")]
    MissingInput { what: &'static str, path: PathBuf, produced_by: &'static str },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn require(path: &Path, what: &'static str, produced_by: &'static str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput { what, path: path.to_path_buf(), produced_by })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub records: usize,
}

/// Writes a synthetic corpus as cache files plus a manifest referencing them.
pub fn run_synth(cfg: &PipelineConfig) -> Result<SynthSummary, PipelineError> {
    cfg.validate()?;
    let spec = SyntheticSpec {
        num_speakers: cfg.synth.num_speakers,
        num_words: cfg.synth.num_words,
        num_takes: cfg.synth.num_takes,
        timesteps: cfg.dataset.timesteps,
        width: cfg.features.width,
        noise_scale: cfg.synth.noise_scale,
        seed: cfg.synth_seed(),
    };
    let sequences = generate_synthetic(&spec)?;
    let manifest = cfg.manifest_path();
    let cache_dir = cfg.cache_dir();
    fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
    let manifest_dir = manifest.parent().unwrap_or(Path::new(""));
    sequences
        .par_iter()
        .try_for_each(|seq| cache_write(cache_path(&cache_dir, &seq.identity), seq))?;
    let records: Vec<UtteranceRecord> = sequences
        .iter()
        .map(|seq| {
            let path = cache_path(&cache_dir, &seq.identity);
            // Keep the manifest relocatable when the cache sits beside it.
            let path = path.strip_prefix(manifest_dir).map(Path::to_path_buf).unwrap_or(path);
            UtteranceRecord::with_embedding(seq.identity.clone(), path)
        })
        .collect();
    if let Some(parent) = manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_manifest(&manifest, &records)?;
    Ok(SynthSummary { manifest, records: records.len() })
}

pub fn load_records(cfg: &PipelineConfig) -> Result<Vec<UtteranceRecord>, PipelineError> {
    let path = cfg.manifest_path();
    require(&path, "manifest", "synth")?;
    let records = load_manifest(&path)?;
    if records.is_empty() {
        return Err(DatasetError::InvalidPlan(format!("manifest {} is empty", path.display())).into());
    }
    Ok(records)
}

fn projection(cfg: &PipelineConfig) -> Result<ExtractorBackend, PipelineError> {
    Ok(ExtractorBackend::projection(ProjectionParams {
        seed: cfg.projection_seed(),
        width: cfg.features.width,
        side: cfg.dataset.side,
        pool: cfg.features.pool,
    })?)
}

/// Embedding for one record: its own cache file, a cached extraction in
/// `cache_dir`, or (projection backend only) a fresh extraction.
fn embed_record(
    cfg: &PipelineConfig,
    record: &UtteranceRecord,
    backend: Option<&ExtractorBackend>,
) -> Result<EmbeddingSequence, PipelineError> {
    let (t, d) = (cfg.dataset.timesteps, cfg.features.width);
    match &record.source {
        FrameSource::Embedding(path) => {
            if !path.exists() {
                return Err(FeatureError::CacheMiss { identity: record.identity.clone(), path: path.clone() }.into());
            }
            Ok(cache_read_checked(path, record.identity.clone(), t, d)?)
        }
        FrameSource::Frames(_) => {
            let cached = cache_path(&cfg.cache_dir(), &record.identity);
            if cached.exists() {
                return Ok(cache_read_checked(&cached, record.identity.clone(), t, d)?);
            }
            match backend {
                Some(backend) => {
                    let frames = preprocess_sequence(record, t, cfg.dataset.side)?;
                    Ok(extract_sequence(&frames, backend)?)
                }
                None => Err(FeatureError::CacheMiss { identity: record.identity.clone(), path: cached }.into()),
            }
        }
    }
}

/// Loads or computes the embedding of every record, in manifest order.
pub fn load_embeddings(
    cfg: &PipelineConfig,
    records: &[UtteranceRecord],
) -> Result<Vec<EmbeddingSequence>, PipelineError> {
    let backend = match cfg.features.backend {
        BackendKind::Projection => Some(projection(cfg)?),
        BackendKind::Precomputed => None,
    };
    records.par_iter().map(|r| embed_record(cfg, r, backend.as_ref())).collect()
}

pub fn load_store(cfg: &PipelineConfig, records: &[UtteranceRecord]) -> Result<EmbeddingStore, PipelineError> {
    let sequences = load_embeddings(cfg, records)?;
    Ok(EmbeddingStore::from_sequences(cfg.dataset.timesteps, cfg.features.width, &sequences)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub extracted: usize,
    pub cached: usize,
}

/// Fills `cache_dir` with embeddings for every frame record and checks that
/// every embedding record is readable with the configured shape.
pub fn run_extract(cfg: &PipelineConfig) -> Result<ExtractSummary, PipelineError> {
    cfg.validate()?;
    let records = load_records(cfg)?;
    let backend = match cfg.features.backend {
        BackendKind::Projection => Some(projection(cfg)?),
        BackendKind::Precomputed => None,
    };
    let cache_dir = cfg.cache_dir();
    fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
    let fresh: Vec<bool> = records
        .par_iter()
        .map(|record| {
            let target = cache_path(&cache_dir, &record.identity);
            let is_fresh = matches!(record.source, FrameSource::Frames(_)) && !target.exists();
            let seq = embed_record(cfg, record, backend.as_ref())?;
            if is_fresh {
                cache_write(&target, &seq)?;
            }
            Ok(is_fresh)
        })
        .collect::<Result<_, PipelineError>>()?;
    let extracted = fresh.iter().filter(|f| **f).count();
    Ok(ExtractSummary { extracted, cached: records.len() - extracted })
}

/// Enrolled pair from the config, or the first speaker and word in sort order.
pub fn resolve_target(cfg: &PipelineConfig, records: &[UtteranceRecord]) -> Result<WordPair, PipelineError> {
    let speakers: BTreeSet<&str> = records.iter().map(|r| r.identity.speaker.as_str()).collect();
    let speaker = match &cfg.split.target_speaker {
        Some(s) => s.clone(),
        None => speakers.iter().next().map(|s| s.to_string()).ok_or(DatasetError::NoNegatives)?,
    };
    let word = match &cfg.split.target_word {
        Some(w) => w.clone(),
        None => records
            .iter()
            .filter(|r| r.identity.speaker == speaker)
            .map(|r| r.identity.word.as_str())
            .min()
            .map(str::to_string)
            .ok_or_else(|| DatasetError::TargetAbsent(WordPair::new(speaker.clone(), "?")))?,
    };
    Ok(WordPair::new(speaker, word))
}

type Holdouts = (BTreeSet<String>, BTreeMap<String, BTreeSet<String>>);

/// Explicit holdouts from the config, otherwise a seeded draw.
pub fn resolve_plan_holdouts(
    cfg: &PipelineConfig,
    records: &[UtteranceRecord],
    target: Option<&WordPair>,
) -> Result<Holdouts, PipelineError> {
    let (mut unseen, mut heldout) = match (&cfg.split.unseen_speakers, &cfg.split.heldout_words) {
        (Some(_), Some(_)) => (BTreeSet::new(), BTreeMap::new()),
        _ => resolve_holdouts(
            records,
            target,
            if cfg.split.unseen_speakers.is_some() { 0 } else { cfg.split.num_unseen_speakers },
            if cfg.split.heldout_words.is_some() { 0 } else { cfg.split.num_heldout_words },
            cfg.split_seed(),
        )?,
    };
    if let Some(list) = &cfg.split.unseen_speakers {
        unseen = list.iter().cloned().collect();
    }
    if let Some(map) = &cfg.split.heldout_words {
        heldout = map
            .iter()
            .map(|(s, words)| (s.clone(), words.iter().cloned().collect()))
            .collect();
    }
    heldout.retain(|s, words| !unseen.contains(s) && !words.is_empty());
    Ok((unseen, heldout))
}

pub fn split_plan(cfg: &PipelineConfig, target: WordPair, holdouts: Holdouts) -> SplitPlan {
    SplitPlan {
        target,
        unseen_speakers: holdouts.0,
        heldout_words: holdouts.1,
        train_fraction: cfg.split.train_fraction,
        oversample_factor: cfg.split.oversample_factor,
        seed: cfg.split_seed(),
        stratify: cfg.split.stratify,
    }
}

/// Builds and writes `split.json`.
pub fn run_split(cfg: &PipelineConfig) -> Result<DatasetSplit, PipelineError> {
    cfg.validate()?;
    let records = load_records(cfg)?;
    let target = resolve_target(cfg, &records)?;
    let holdouts = resolve_plan_holdouts(cfg, &records, Some(&target))?;
    let split = build_splits(&records, &split_plan(cfg, target, holdouts))?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    split.write(cfg.split_path())?;
    Ok(split)
}

fn read_split(cfg: &PipelineConfig) -> Result<DatasetSplit, PipelineError> {
    let path = cfg.split_path();
    require(&path, "split", "split")?;
    Ok(DatasetSplit::read(&path)?)
}

/// Separates a threshold-calibration set from the training samples. Whole
/// utterances move together (all oversampling replicas), each imposter
/// category contributes `floor(fraction * utterances)` of its utterances, at
/// least one when it has two or more, and the draw is seeded. Returns
/// `(fit, calibration)` with both halves in their original order.
pub fn calibration_carve(
    train: &[SplitSample],
    fraction: f64,
    seed: u64,
) -> (Vec<SplitSample>, Vec<SplitSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: BTreeSet<&Identity> = BTreeSet::new();
    for category in ImposterCategory::ALL {
        let ids: BTreeSet<&Identity> =
            train.iter().filter(|s| s.category == category).map(|s| &s.identity).collect();
        let mut ids: Vec<&Identity> = ids.into_iter().collect();
        let take = ((fraction * ids.len() as f64 + 1e-9).floor() as usize)
            .max(usize::from(ids.len() >= 2))
            .min(ids.len().saturating_sub(1));
        ids.shuffle(&mut rng);
        chosen.extend(ids.into_iter().take(take));
    }
    train.iter().cloned().partition(|s| !chosen.contains(&s.identity))
}

/// The (fit, calibration) halves of `train` under `cfg`. A fixed threshold
/// needs no calibration set, so the whole train set is fitted.
fn carve_for(cfg: &PipelineConfig, train: &[SplitSample]) -> (Vec<SplitSample>, Vec<SplitSample>) {
    match cfg.eval.threshold {
        Some(_) => (train.to_vec(), Vec::new()),
        None => calibration_carve(train, cfg.split.calibration_fraction, cfg.calibration_seed()),
    }
}

pub fn model_dims(cfg: &PipelineConfig) -> Result<ModelDims, PipelineError> {
    Ok(ModelDims::new(cfg.features.width, cfg.model.hidden.clone())?)
}

/// Trains on the fit part of `split.train` (all of it under a fixed threshold).
pub fn fit_split(
    cfg: &PipelineConfig,
    split: &DatasetSplit,
    store: &EmbeddingStore,
    mut on_epoch: impl FnMut(&trainer::EpochRecord, &ModelParams) -> Result<(), TrainError>,
) -> Result<(ModelParams, TrainLog), PipelineError> {
    let (fit, _) = carve_for(cfg, &split.train);
    let setup = TrainSetup {
        dims: model_dims(cfg)?,
        readout: cfg.model.readout,
        init_seed: cfg.init_seed(),
        config: cfg.train_config(),
    };
    Ok(trainer::train(&fit, None, store, &setup, &mut on_epoch)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub target: WordPair,
    pub samples: usize,
    pub parameters: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub seconds: f64,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains on the split and writes the model, log and optional checkpoints.
pub fn run_train(cfg: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    cfg.validate()?;
    let split = read_split(cfg)?;
    let records = load_records(cfg)?;
    let store = load_store(cfg, &records)?;
    let started = Instant::now();
    let mut checkpoints = Vec::new();
    let checkpoint_dir = cfg.checkpoint_dir();
    let every = cfg.train.checkpoint_every;
    let (params, log) = fit_split(cfg, &split, &store, |record, params| {
        if let Some(k) = every {
            if record.epoch % k == 0 {
                fs::create_dir_all(&checkpoint_dir).map_err(|e| TrainError::Hook(e.to_string()))?;
                let path = checkpoint_dir.join(format!("epoch_{:04}.tfam", record.epoch));
                save_model(&path, params)?;
                checkpoints.push(path);
            }
        }
        Ok(())
    })?;
    let seconds = started.elapsed().as_secs_f64();
    save_model(cfg.model_path(), &params)?;
    write_file(&cfg.train_log_path(), log.to_jsonl(cfg.train.log_timing))?;
    let last = log.epochs.last().expect("at least one epoch");
    let (fit, _) = calibration_carve(&split.train, cfg.split.calibration_fraction, cfg.calibration_seed());
    Ok(TrainSummary {
        target: split.plan.target.clone(),
        samples: fit.len(),
        parameters: params.values().len(),
        final_loss: last.loss,
        final_accuracy: last.accuracy,
        seconds,
        checkpoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Given in the config.
    Fixed,
    /// Youden-optimal on the calibration carve.
    Calibrated,
    /// Calibration set lacked a class; fell back to 0.5.
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub target: WordPair,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub calibration_samples: usize,
    pub provenance: Provenance,
    #[serde(flatten)]
    pub report: EvalReport,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

fn scored(samples: &[SplitSample], scores: &[f64]) -> Result<Vec<ScoredSample>, MetricError> {
    samples.iter().zip(scores).map(|(s, &p)| ScoredSample::new(p, s.label, s.category)).collect()
}

/// Youden-optimal threshold moved to the middle of the score interval that
/// yields the same calibration counts, so that it does not sit on the lowest
/// accepted calibration score.
pub fn margin_threshold(curve: &RocCurve) -> f64 {
    let best = choose_threshold(curve);
    let pts = &curve.points;
    let k = pts.iter().position(|p| p.threshold == best).expect("chosen from the curve");
    // The sentinels just outside the score range bound no real gap.
    let t = if k == 0 || k + 2 >= pts.len() {
        best
    } else {
        let mid = (best + pts[k + 1].threshold) / 2.0;
        // Adjacent floats have no midpoint; never change the counts.
        if mid > pts[k + 1].threshold && mid <= best {
            mid
        } else {
            best
        }
    };
    t.clamp(0.0, 1.0)
}

/// Picks the operating threshold and scores the test set.
pub fn evaluate_split(
    cfg: &PipelineConfig,
    split: &DatasetSplit,
    params: &ModelParams,
    store: &EmbeddingStore,
) -> Result<(PipelineReport, Option<RocCurve>), PipelineError> {
    let (_, calibration) = carve_for(cfg, &split.train);
    let (threshold, source) = match cfg.eval.threshold {
        Some(t) => (t, ThresholdSource::Fixed),
        None => {
            let scores = score_samples(params, &calibration, store)?;
            match roc_curve(&scored(&calibration, &scores)?) {
                Ok(curve) => (margin_threshold(&curve), ThresholdSource::Calibrated),
                Err(MetricError::SingleClass { .. }) => (0.5, ThresholdSource::Default),
                Err(e) => return Err(e.into()),
            }
        }
    };
    let scores = score_samples(params, &split.test, store)?;
    let (report, curve) = EvalReport::build(&scored(&split.test, &scores)?, threshold)?;
    Ok((
        PipelineReport {
            target: split.plan.target.clone(),
            threshold,
            threshold_source: source,
            calibration_samples: calibration.len(),
            provenance: split.provenance,
            report,
        },
        curve,
    ))
}

/// Scores the split's test set with the trained model and writes
/// `report.json` and `roc.tsv`.
pub fn run_eval(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    let model_path = cfg.model_path();
    require(&model_path, "model", "train")?;
    let split = read_split(cfg)?;
    let params = load_model(&model_path, Some(cfg.features.width))?;
    let records = load_records(cfg)?;
    let store = load_store(cfg, &records)?;
    let (report, curve) = evaluate_split(cfg, &split, &params, &store)?;
    write_file(&cfg.report_path(), report.to_json())?;
    let roc_path = cfg.roc_path();
    match curve {
        Some(curve) => write_file(&roc_path, curve.to_tsv())?,
        None if roc_path.exists() => fs::remove_file(&roc_path).map_err(io_err(&roc_path))?,
        None => {}
    }
    Ok(report)
}

/// What `run_verify` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum VerifySample {
    Embedding(PathBuf),
    Frames(Vec<PathBuf>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: f64,
    pub threshold: f64,
    pub accept: bool,
}

/// Scores a single sample; accepted iff `score >= threshold`.
pub fn run_verify(
    cfg: &PipelineConfig,
    model: &Path,
    sample: &VerifySample,
    threshold: f64,
) -> Result<Verdict, PipelineError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricError::ThresholdOutOfRange(threshold).into());
    }
    require(model, "model", "train")?;
    let params = load_model(model, None)?;
    let identity = Identity::new("verify", "verify", 0);
    let seq = match sample {
        VerifySample::Embedding(path) => {
            require(path, "embedding", "extract")?;
            features::cache_read(path, identity)?
        }
        VerifySample::Frames(paths) => {
            let backend = projection(cfg)?;
            let frames = if paths.len() == 1 && paths[0].is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(&paths[0])
                    .map_err(io_err(&paths[0]))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file())
                    .collect();
                files.sort();
                files
            } else {
                paths.clone()
            };
            let record = UtteranceRecord::with_frames(identity, frames);
            let seq = preprocess_sequence(&record, cfg.dataset.timesteps, cfg.dataset.side)?;
            extract_sequence(&seq, &backend)?
        }
    };
    params.check_input(seq.width)?;
    let score = seqmodel::predict(&params, &seq.to_f64(), seq.timesteps)?;
    Ok(Verdict { score, threshold, accept: score >= threshold })
}

/// Cosine-similarity analysis of the corpus against the enrolled pair.
pub fn run_variation(cfg: &PipelineConfig) -> Result<VariationReport, PipelineError> {
    cfg.validate()?;
    let records = load_records(cfg)?;
    let target = resolve_target(cfg, &records)?;
    let sequences = load_embeddings(cfg, &records)?;
    let report = variation_report(&sequences, &target)?;
    let text = serde_json::to_string_pretty(&report).expect("variation report serializes");
    write_file(&cfg.out.join("variation.json"), text + "\n")?;
    Ok(report)
}

/// Frames already in memory, embedded with the configured projection.
pub fn embed_frames(
    cfg: &PipelineConfig,
    identity: Identity,
    frames: Vec<image::RgbImage>,
) -> Result<EmbeddingSequence, PipelineError> {
    let seq = preprocess_frames(identity, frames, None, cfg.dataset.timesteps, cfg.dataset.side)?;
    Ok(extract_sequence(&seq, &projection(cfg)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Pool;
    use crate::metrics::ScoredSample;

    fn sample(speaker: &str, word: &str, take: u32, replica: u32, target: &WordPair) -> SplitSample {
        let identity = Identity::new(speaker, word, take);
        let category = crate::dataset::categorize(&identity, target);
        SplitSample { identity, replica, label: category.label(), category, pool: Pool::Working }
    }

    fn train_set() -> Vec<SplitSample> {
        let target = WordPair::new("a", "x");
        let mut out = Vec::new();
        for take in 0..10 {
            for replica in 0..3 {
                out.push(sample("a", "x", take, replica, &target));
            }
            out.push(sample("a", "y", take, 0, &target));
            out.push(sample("b", "x", take, 0, &target));
            out.push(sample("b", "y", take, 0, &target));
        }
        out
    }

    #[test]
    fn carve_partitions_by_utterance_and_category() {
        let train = train_set();
        let (fit, cal) = calibration_carve(&train, 0.15, 3);
        assert_eq!(fit.len() + cal.len(), train.len());
        // floor(0.15 * 10) = 1 utterance per category; genuine ones carry 3 replicas.
        assert_eq!(cal.len(), 3 + 1 + 1 + 1);
        for category in ImposterCategory::ALL {
            assert!(cal.iter().any(|s| s.category == category));
        }
        let cal_ids: BTreeSet<_> = cal.iter().map(|s| &s.identity).collect();
        assert!(fit.iter().all(|s| !cal_ids.contains(&s.identity)));
        assert_eq!(calibration_carve(&train, 0.15, 3), (fit, cal));
        assert_ne!(calibration_carve(&train, 0.15, 4).1, calibration_carve(&train, 0.15, 3).1);
    }

    #[test]
    fn carve_keeps_singletons_for_training() {
        let target = WordPair::new("a", "x");
        let train = vec![sample("a", "x", 0, 0, &target), sample("b", "y", 0, 0, &target)];
        let (fit, cal) = calibration_carve(&train, 0.5, 0);
        assert_eq!(fit.len(), 2);
        assert!(cal.is_empty());
    }

    #[test]
    fn fixed_threshold_fits_the_whole_train_set() {
        let train = train_set();
        let mut cfg = PipelineConfig::default();
        assert!(!carve_for(&cfg, &train).1.is_empty());
        cfg.eval.threshold = Some(0.4);
        assert_eq!(carve_for(&cfg, &train), (train.clone(), Vec::new()));
    }

    #[test]
    fn margin_threshold_splits_the_gap() {
        let samples: Vec<ScoredSample> = [(0.9, true), (0.8, true), (0.4, false), (0.1, false)]
            .iter()
            .map(|&(s, l)| ScoredSample::binary(s, l).unwrap())
            .collect();
        let curve = roc_curve(&samples).unwrap();
        assert_eq!(choose_threshold(&curve), 0.8);
        assert!((margin_threshold(&curve) - 0.6).abs() < 1e-15);
        // Nothing separates the classes: the rejecting sentinel wins and stays put.
        let flat: Vec<ScoredSample> =
            [(0.5, true), (0.5, false)].iter().map(|&(s, l)| ScoredSample::binary(s, l).unwrap()).collect();
        let curve = roc_curve(&flat).unwrap();
        assert_eq!(margin_threshold(&curve), choose_threshold(&curve).clamp(0.0, 1.0));
    }

    #[test]
    fn target_defaults_to_first_speaker_and_word() {
        let records: Vec<UtteranceRecord> = ["b/y", "a/z", "a/y", "c/a"]
            .iter()
            .map(|p| {
                let (s, w) = p.split_once('/').unwrap();
                UtteranceRecord::with_embedding(Identity::new(s, w, 0), "x.emb")
            })
            .collect();
        let mut cfg = PipelineConfig::default();
        assert_eq!(resolve_target(&cfg, &records).unwrap(), WordPair::new("a", "y"));
        cfg.split.target_speaker = Some("c".into());
        assert_eq!(resolve_target(&cfg, &records).unwrap(), WordPair::new("c", "a"));
    }

    #[test]
    fn explicit_holdouts_override_the_draw() {
        let records: Vec<UtteranceRecord> = (0..3)
            .flat_map(|s| (0..3).map(move |w| (s, w)))
            .map(|(s, w)| UtteranceRecord::with_embedding(Identity::new(format!("s{s}"), format!("w{w}"), 0), "x"))
            .collect();
        let mut cfg = PipelineConfig::default();
        cfg.split.unseen_speakers = Some(vec!["s2".into()]);
        cfg.split.heldout_words = Some(BTreeMap::from([
            ("s1".to_string(), vec!["w0".to_string()]),
            ("s2".to_string(), vec!["w1".to_string()]),
        ]));
        let (unseen, heldout) = resolve_plan_holdouts(&cfg, &records, None).unwrap();
        assert_eq!(unseen, BTreeSet::from(["s2".to_string()]));
        assert_eq!(heldout.len(), 1);
        assert!(heldout["s1"].contains("w0"));
    }
}
