//! Utterance manifests, frame preprocessing, split construction and
//! synthetic corpora.

mod manifest;
mod preprocess;
mod split;
mod synth;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, parse_manifest, write_manifest, Bbox, FrameSource, UtteranceRecord};
pub use preprocess::{
    preprocess_frames, preprocess_sequence, sample_indices, FrameSequence, DEFAULT_SIDE,
    DEFAULT_TIMESTEPS,
};
pub use split::{
    build_splits, labeling_summary, resolve_holdouts, DatasetSplit, LabelingSummary, Pool,
    Provenance, SplitPlan, SplitSample,
};
pub use synth::{generate_synthetic, speaker_name, word_name, SyntheticSpec};

/// Key of one utterance: who said which word, and which repetition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Identity {
    pub speaker: String,
    pub word: String,
    pub take: u32,
}

impl Identity {
    pub fn new(speaker: impl Into<String>, word: impl Into<String>, take: u32) -> Self {
        Self { speaker: speaker.into(), word: word.into(), take }
    }

    pub fn pair(&self) -> WordPair {
        WordPair::new(self.speaker.clone(), self.word.clone())
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.speaker, self.word, self.take)
    }
}

/// An enrolled (speaker, word) combination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WordPair {
    pub speaker: String,
    pub word: String,
}

impl WordPair {
    pub fn new(speaker: impl Into<String>, word: impl Into<String>) -> Self {
        Self { speaker: speaker.into(), word: word.into() }
    }
}

impl fmt::Display for WordPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.speaker, self.word)
    }
}

/// How a sample relates to the enrolled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ImposterCategory {
    Genuine,
    SamePersonWrongWord,
    DifferentPersonSameWord,
    DifferentPersonWrongWord,
}

impl ImposterCategory {
    pub const ALL: [ImposterCategory; 4] = [
        ImposterCategory::Genuine,
        ImposterCategory::SamePersonWrongWord,
        ImposterCategory::DifferentPersonSameWord,
        ImposterCategory::DifferentPersonWrongWord,
    ];

    /// Binary label implied by the category (1 only for genuine attempts).
    pub fn label(self) -> u8 {
        u8::from(self == ImposterCategory::Genuine)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImposterCategory::Genuine => "genuine",
            ImposterCategory::SamePersonWrongWord => "same_person_wrong_word",
            ImposterCategory::DifferentPersonSameWord => "different_person_same_word",
            ImposterCategory::DifferentPersonWrongWord => "different_person_wrong_word",
        }
    }
}

impl fmt::Display for ImposterCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn categorize(sample: &Identity, target: &WordPair) -> ImposterCategory {
    match (sample.speaker == target.speaker, sample.word == target.word) {
        (true, true) => ImposterCategory::Genuine,
        (true, false) => ImposterCategory::SamePersonWrongWord,
        (false, true) => ImposterCategory::DifferentPersonSameWord,
        (false, false) => ImposterCategory::DifferentPersonWrongWord,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate utterance {0} in manifest")]
    DuplicateKey(Identity),
    #[error("utterance {0} has no frames")]
    NoFrames(Identity),
    #[error("utterance {0} has an embedding reference, not image frames")]
    NotFrames(Identity),
    #[error("frame {path}: {message}")]
    Frame { path: PathBuf, message: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid split plan: {0}")]
    InvalidPlan(String),
    #[error("target pair {0} is absent from the working pool")]
    TargetAbsent(WordPair),
    #[error("working pool has no negative samples")]
    NoNegatives,
}
