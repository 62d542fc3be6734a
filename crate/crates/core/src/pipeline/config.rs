use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dataset::{DEFAULT_SIDE, DEFAULT_TIMESTEPS};
use crate::features::DEFAULT_WIDTH;
use crate::seqmodel::{Readout, DEFAULT_HIDDEN};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Records must reference cache files (or frames are looked up in `cache_dir`).
    #[default]
    Precomputed,
    /// Frame records are embedded with the seeded projection extractor.
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub manifest: Option<PathBuf>,
    pub timesteps: usize,
    pub side: u32,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { manifest: None, timesteps: DEFAULT_TIMESTEPS, side: DEFAULT_SIDE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub num_speakers: usize,
    pub num_words: usize,
    pub num_takes: u32,
    pub noise_scale: f64,
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { num_speakers: 10, num_words: 10, num_takes: 10, noise_scale: 0.1, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub backend: BackendKind,
    pub width: usize,
    pub cache_dir: Option<PathBuf>,
    pub projection_seed: Option<u64>,
    pub pool: u32,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            backend: BackendKind::default(),
            width: DEFAULT_WIDTH,
            cache_dir: None,
            projection_seed: None,
            pool: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub target_speaker: Option<String>,
    pub target_word: Option<String>,
    /// Explicit unseen speakers; drawn at random when absent.
    pub unseen_speakers: Option<Vec<String>>,
    /// Explicit held-out words per speaker; drawn at random when absent.
    pub heldout_words: Option<BTreeMap<String, Vec<String>>>,
    pub num_unseen_speakers: usize,
    pub num_heldout_words: usize,
    pub train_fraction: f64,
    pub oversample_factor: u32,
    pub stratify: bool,
    /// Share of the training set carved off to fit the decision threshold.
    pub calibration_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            target_speaker: None,
            target_word: None,
            unseen_speakers: None,
            heldout_words: None,
            num_unseen_speakers: 5,
            num_heldout_words: 3,
            train_fraction: 0.7,
            oversample_factor: 11,
            stratify: false,
            calibration_fraction: 0.15,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub readout: Readout,
    pub init_seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: DEFAULT_HIDDEN.to_vec(), readout: Readout::LastStep, init_seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub gradient_clip_norm: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    /// Record per-epoch wall time in the train log.
    pub log_timing: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            gradient_clip_norm: t.gradient_clip_norm,
            seed: None,
            checkpoint_every: None,
            log_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Fixed decision threshold; calibrated on held-back training data when absent.
    pub threshold: Option<f64>,
}

/// All pipeline settings. Loaded from TOML; any key can be overridden with
/// [`PipelineConfig::set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub dataset: DatasetSection,
    pub synth: SynthSection,
    pub features: FeaturesSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            jobs: None,
            dataset: DatasetSection::default(),
            synth: SynthSection::default(),
            features: FeaturesSection::default(),
            split: SplitSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

const SECTIONS: [&str; 7] = ["dataset", "synth", "features", "split", "model", "train", "eval"];
const ROOT_KEYS: [&str; 3] = ["seed", "out", "jobs"];

// Derived seeds are offset from the global seed so each stage draws an
// independent stream.
const CALIBRATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const INIT_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const SHUFFLE_SALT: u64 = 0x8cb9_2ba7_2f3d_8dd7;

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one key. `key` is `section.key`, a bare key that exists in
    /// exactly one place, and may use `-` for `_`. `value` is read as a TOML
    /// literal, then as a comma-separated list, then as a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let key = key.trim_start_matches("--").replace('-', "_");
        let (section, name) = self.resolve_key(&key)?;
        let mut candidates = Vec::new();
        if let Ok(v) = toml::from_str::<toml::Table>(&format!("v = {value}")) {
            candidates.push(v["v"].clone());
        }
        if !value.starts_with('[') && value.contains(',') {
            if let Ok(v) = toml::from_str::<toml::Table>(&format!("v = [{value}]")) {
                candidates.push(v["v"].clone());
            }
        }
        candidates.push(toml::Value::String(value.to_string()));

        let base = toml::Table::try_from(&*self).expect("config serializes to a table");
        let mut last_err = None;
        for candidate in candidates {
            let mut table = base.clone();
            let target = match section {
                Some(s) => table
                    .entry(s.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .expect("sections are tables"),
                None => &mut table,
            };
            target.insert(name.clone(), candidate);
            match toml::Value::Table(table).try_into::<PipelineConfig>() {
                Ok(cfg) => {
                    *self = cfg;
                    return Ok(());
                }
                Err(e) => last_err = Some(e.to_string()),
            }
        }
        Err(PipelineError::Config(format!(
            "cannot set {key} = {value}: {}",
            last_err.unwrap_or_default()
        )))
    }

    fn resolve_key(&self, key: &str) -> Result<(Option<&'static str>, String), PipelineError> {
        let known = Self::keys();
        if let Some((section, name)) = key.split_once('.') {
            let section = SECTIONS
                .iter()
                .copied()
                .find(|s| *s == section)
                .ok_or_else(|| PipelineError::Config(format!("unknown section `{section}`")))?;
            if !known.iter().any(|(s, k)| *s == Some(section) && k == name) {
                return Err(PipelineError::Config(format!("unknown key `{key}`")));
            }
            return Ok((Some(section), name.to_string()));
        }
        if ROOT_KEYS.contains(&key) {
            return Ok((None, key.to_string()));
        }
        let matches: Vec<_> = known.iter().filter(|(_, k)| k == key).collect();
        match matches.as_slice() {
            [(section, k)] => Ok((*section, k.clone())),
            [] => Err(PipelineError::Config(format!("unknown key `{key}`"))),
            _ => Err(PipelineError::Config(format!(
                "key `{key}` is ambiguous; qualify it as section.{key}"
            ))),
        }
    }

    /// Every `(section, key)` the config accepts.
    pub fn keys() -> Vec<(Option<&'static str>, String)> {
        let mut cfg = PipelineConfig::default();
        // Populate optional fields so they show up in the serialized table.
        cfg.jobs = Some(1);
        cfg.dataset.manifest = Some(PathBuf::new());
        cfg.synth.seed = Some(0);
        cfg.features.cache_dir = Some(PathBuf::new());
        cfg.features.projection_seed = Some(0);
        cfg.split.target_speaker = Some(String::new());
        cfg.split.target_word = Some(String::new());
        cfg.split.unseen_speakers = Some(vec![]);
        cfg.split.heldout_words = Some(BTreeMap::new());
        cfg.split.seed = Some(0);
        cfg.model.init_seed = Some(0);
        cfg.train.gradient_clip_norm = Some(1.0);
        cfg.train.seed = Some(0);
        cfg.train.checkpoint_every = Some(1);
        cfg.eval.threshold = Some(0.5);
        let table = toml::Table::try_from(&cfg).expect("config serializes");
        let mut out = Vec::new();
        for (k, v) in table {
            match v {
                toml::Value::Table(t) if SECTIONS.contains(&k.as_str()) => {
                    let section = SECTIONS.iter().copied().find(|s| *s == k).unwrap();
                    out.extend(t.keys().map(|name| (Some(section), name.clone())));
                }
                _ => out.push((None, k)),
            }
        }
        out
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset.manifest.clone().unwrap_or_else(|| self.out.join("manifest.jsonl"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.features.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    pub fn split_path(&self) -> PathBuf {
        self.out.join("split.json")
    }

    pub fn model_path(&self) -> PathBuf {
        self.out.join("model.tfam")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.out.join("train_log.jsonl")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join("report.json")
    }

    pub fn roc_path(&self) -> PathBuf {
        self.out.join("roc.tsv")
    }

    pub fn sweep_path(&self) -> PathBuf {
        self.out.join("sweep.tsv")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    pub fn synth_seed(&self) -> u64 {
        self.synth.seed.unwrap_or(self.seed)
    }

    pub fn projection_seed(&self) -> u64 {
        self.features.projection_seed.unwrap_or(self.seed)
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    pub fn calibration_seed(&self) -> u64 {
        self.split_seed() ^ CALIBRATION_SALT
    }

    pub fn init_seed(&self) -> u64 {
        self.model.init_seed.unwrap_or(self.seed ^ INIT_SALT)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.train.seed.unwrap_or(self.seed ^ SHUFFLE_SALT)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam_beta1: self.train.adam_beta1,
            adam_beta2: self.train.adam_beta2,
            adam_epsilon: self.train.adam_epsilon,
            gradient_clip_norm: self.train.gradient_clip_norm,
            seed: self.shuffle_seed(),
        }
    }

    /// Checks numeric invariants that do not depend on the data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.dataset.timesteps == 0 {
            return fail("dataset.timesteps must be at least 1");
        }
        if self.dataset.side == 0 {
            return fail("dataset.side must be at least 1");
        }
        if self.features.width == 0 {
            return fail("features.width must be at least 1");
        }
        if !(self.split.calibration_fraction > 0.0 && self.split.calibration_fraction < 1.0) {
            return fail("split.calibration_fraction must lie strictly between 0 and 1");
        }
        if let Some(t) = self.eval.threshold {
            if !(0.0..=1.0).contains(&t) {
                return fail("eval.threshold must lie in [0, 1]");
            }
        }
        if self.train.checkpoint_every == Some(0) {
            return fail("train.checkpoint_every must be at least 1");
        }
        if self.jobs == Some(0) {
            return fail("jobs must be at least 1");
        }
        self.train_config().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml(
            "seed = 5\n[train]\nepochs = 3\n[model]\nhidden = [4, 2]\nreadout = \"mean_pool\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.hidden, vec![4, 2]);
        assert_eq!(cfg.model.readout, Readout::MeanPool);
        assert!(PipelineConfig::from_toml("[train]\nepochz = 3\n").is_err());
    }

    #[test]
    fn overrides_by_bare_and_qualified_key() {
        let mut cfg = PipelineConfig::default();
        cfg.set("epochs", "7").unwrap();
        cfg.set("--target-speaker", "s3").unwrap();
        cfg.set("target_word", "12").unwrap();
        cfg.set("hidden", "16,8,8,4").unwrap();
        cfg.set("train.seed", "9").unwrap();
        cfg.set("seed", "11").unwrap();
        cfg.set("threshold", "0.25").unwrap();
        cfg.set("out", "/tmp/x").unwrap();
        cfg.set("backend", "projection").unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.split.target_speaker.as_deref(), Some("s3"));
        assert_eq!(cfg.split.target_word.as_deref(), Some("12"));
        assert_eq!(cfg.model.hidden, vec![16, 8, 8, 4]);
        assert_eq!(cfg.train.seed, Some(9));
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.eval.threshold, Some(0.25));
        assert_eq!(cfg.out, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.features.backend, BackendKind::Projection);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("no_such_key", "1").is_err());
        assert!(cfg.set("epochs", "many").is_err());
        assert!(cfg.set("bogus.epochs", "1").is_err());
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn validation_catches_bad_numbers() {
        let mut cfg = PipelineConfig::default();
        cfg.train.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.eval.threshold = Some(1.5);
        assert!(cfg.validate().is_err());
    }
}
