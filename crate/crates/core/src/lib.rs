//! Lip-password authentication pipeline.
//!
//! Per-frame facial embeddings of a spoken word are fed through a stacked
//! LSTM with a sigmoid head that decides whether a clip shows the enrolled
//! person saying the enrolled word. The crate covers the whole path:
//!
//! - [`dataset`]: manifests, frame preprocessing, the holdout/oversampling
//!   split protocol and a seeded synthetic corpus generator.
//! - [`features`]: pluggable per-frame extractors, the embedding cache
//!   format and cosine-similarity analysis.
//! - [`seqmodel`]: the LSTM classifier with exact backpropagation through time.
//! - [`trainer`]: BCE loss, Adam and the mini-batch loop.
//! - [`metrics`]: confusion counts, ROC, EER, AUC and per-imposter reporting.
//! - [`pipeline`]: config-driven composition used by the command-line tool.

pub mod dataset;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod seqmodel;
pub mod trainer;

pub use dataset::{
    build_splits, categorize, generate_synthetic, load_manifest, preprocess_sequence,
    DatasetSplit, FrameSequence, Identity, ImposterCategory, SplitPlan, SplitSample,
    UtteranceRecord, WordPair,
};
pub use features::{cosine_similarity, EmbeddingSequence, ExtractorBackend};
pub use metrics::{EvalReport, RocCurve, ScoredSample};
pub use seqmodel::{ModelDims, ModelParams, Readout};
pub use trainer::{TrainConfig, TrainLog};
