use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    evaluate_split, fit_split, load_records, load_store, resolve_plan_holdouts, split_plan,
    write_file, PipelineConfig, PipelineError, PipelineReport,
};
use crate::dataset::{build_splits, UtteranceRecord, WordPair};
use crate::trainer::EmbeddingStore;

/// One enrolled pair's outcome. Metrics are absent when the pair failed or
/// the metric was undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target: WordPair,
    pub error: Option<String>,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    pub threshold: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy_at_half: Option<f64>,
    /// Wall time; kept out of the TSV so reruns compare byte for byte.
    #[serde(skip)]
    pub seconds: f64,
}

impl SweepRow {
    fn from_report(target: WordPair, r: &PipelineReport, seconds: f64) -> Self {
        Self {
            target,
            error: None,
            auc: r.report.auc,
            eer: r.report.eer,
            threshold: Some(r.threshold),
            accuracy: r.report.calibrated.accuracy,
            sensitivity: r.report.calibrated.sensitivity,
            specificity: r.report.calibrated.specificity,
            accuracy_at_half: r.report.at_half.accuracy,
            seconds,
        }
    }

    fn failed(target: WordPair, error: String, seconds: f64) -> Self {
        Self {
            target,
            error: Some(error),
            auc: None,
            eer: None,
            threshold: None,
            accuracy: None,
            sensitivity: None,
            specificity: None,
            accuracy_at_half: None,
            seconds,
        }
    }

    fn metrics(&self) -> [Option<f64>; 6] {
        [self.auc, self.eer, self.accuracy, self.sensitivity, self.specificity, self.accuracy_at_half]
    }
}

const METRIC_NAMES: [&str; 6] = ["auc", "eer", "accuracy", "sensitivity", "specificity", "accuracy_at_half"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Mean of each metric over the rows where it is defined.
    pub means: Vec<(String, Option<f64>)>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl SweepReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("speaker\tword\tstatus\tthreshold");
        for name in METRIC_NAMES {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row_line(row));
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

pub fn row_line(row: &SweepRow) -> String {
    let status = match &row.error {
        None => "ok".to_string(),
        Some(e) => format!("error: {}", e.replace(['\t', '\n'], " ")),
    };
    let mut line = format!("{}\t{}\t{}\t{}", row.target.speaker, row.target.word, status, cell(row.threshold));
    for v in row.metrics() {
        line.push('\t');
        line.push_str(&cell(v));
    }
    line.push('\n');
    line
}

/// Pairs eligible for enrollment: every (speaker, word) whose speaker is
/// not unseen and whose word is not held out for that speaker.
fn eligible_pairs(cfg: &PipelineConfig, records: &[UtteranceRecord]) -> Result<Vec<WordPair>, PipelineError> {
    let (unseen, heldout) = resolve_plan_holdouts(cfg, records, None)?;
    let pairs: BTreeSet<WordPair> = records
        .iter()
        .map(|r| r.identity.pair())
        .filter(|p| !unseen.contains(&p.speaker))
        .filter(|p| !heldout.get(&p.speaker).is_some_and(|w| w.contains(&p.word)))
        .collect();
    Ok(pairs.into_iter().collect())
}

fn run_pair(
    cfg: &PipelineConfig,
    records: &[UtteranceRecord],
    store: &EmbeddingStore,
    target: &WordPair,
) -> Result<PipelineReport, PipelineError> {
    let holdouts = resolve_plan_holdouts(cfg, records, None)?;
    let split = build_splits(records, &split_plan(cfg, target.clone(), holdouts))?;
    let (params, _) = fit_split(cfg, &split, store, |_, _| Ok(()))?;
    let (report, _) = evaluate_split(cfg, &split, &params, store)?;
    Ok(report)
}

/// Trains and evaluates every eligible pair under one shared holdout draw,
/// writing `sweep.tsv`. Per-pair failures become error rows. `on_row` is
/// called once per finished pair, in completion order.
pub fn run_sweep(
    cfg: &PipelineConfig,
    on_row: impl Fn(&SweepRow) + Sync,
) -> Result<SweepReport, PipelineError> {
    cfg.validate()?;
    let records = load_records(cfg)?;
    let pairs = eligible_pairs(cfg, &records)?;
    if pairs.is_empty() {
        return Err(PipelineError::Config("no eligible speaker-word pairs".into()));
    }
    let store = load_store(cfg, &records)?;
    let work = || {
        pairs
            .par_iter()
            .map(|target| {
                let started = Instant::now();
                let row = match run_pair(cfg, &records, &store, target) {
                    Ok(r) => SweepRow::from_report(target.clone(), &r, started.elapsed().as_secs_f64()),
                    Err(e) => SweepRow::failed(target.clone(), e.to_string(), started.elapsed().as_secs_f64()),
                };
                on_row(&row);
                row
            })
            .collect::<Vec<_>>()
    };
    let rows = match cfg.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let means = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let defined: Vec<f64> = rows.iter().filter_map(|r| r.metrics()[k]).collect();
            let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            (name.to_string(), mean)
        })
        .collect();
    let report = SweepReport { rows, means };
    write_file(&cfg.sweep_path(), report.to_tsv())?;
    Ok(report)
}
