use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lipauth_core::pipeline::{self, PipelineConfig, PipelineReport, VerifySample};

/// Lip-password authentication: synthetic data, splits, training and scoring.
#[derive(Debug, Parser)]
#[command(name = "lipauth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic embedding corpus and its manifest.
    Synth(Common),
    /// Embed frame records into the cache (and validate embedding records).
    Extract(Common),
    /// Build the train/test split for the enrolled pair.
    Split(Common),
    /// Train the classifier on the split.
    Train(Common),
    /// Evaluate the trained model on the split's test set.
    Eval(Common),
    /// Score one sample; exit 0 on accept, 1 on reject.
    Verify(VerifyArgs),
    /// Train and evaluate every eligible speaker-word pair.
    Sweep(Common),
    /// Cosine-similarity analysis of the corpus against the enrolled pair.
    Variation(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    target_speaker: Option<String>,
    #[arg(long)]
    target_word: Option<String>,
    /// Fixed decision threshold instead of a calibrated one.
    #[arg(long)]
    threshold: Option<f64>,
    /// Save a model checkpoint every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override any config key, e.g. `--set train.epochs=5` or `--set hidden=16,8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Model file; defaults to `<out>/model.tfam`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Embedding cache file to score.
    #[arg(long, conflicts_with = "frames", required_unless_present = "frames")]
    embedding: Option<PathBuf>,
    /// Frame images (or one directory of them) to embed and score.
    #[arg(long, num_args = 1..)]
    frames: Vec<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .with_context(|| format!("override `{item}` is not KEY=VALUE"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(s) = &self.target_speaker {
            cfg.split.target_speaker = Some(s.clone());
        }
        if let Some(w) = &self.target_word {
            cfg.split.target_word = Some(w.clone());
        }
        if let Some(t) = self.threshold {
            cfg.eval.threshold = Some(t);
        }
        if let Some(k) = self.checkpoint_every {
            cfg.train.checkpoint_every = Some(k);
        }
        if let Some(j) = self.jobs {
            cfg.jobs = Some(j);
        }
        cfg.validate()?;
        if let Some(jobs) = cfg.jobs {
            // Ignored if a pool already exists; only the first command sets it.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
        }
        Ok(cfg)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn print_report(r: &PipelineReport) {
    let rep = &r.report;
    println!("target          {}/{}", r.target.speaker, r.target.word);
    println!("test samples    {} ({} genuine, {} imposter)", rep.samples, rep.positives, rep.negatives);
    println!("auc             {}", opt(rep.auc));
    println!("eer             {} (threshold {})", opt(rep.eer), opt(rep.eer_threshold));
    for (name, point) in [("threshold", &rep.calibrated), ("threshold 0.5", &rep.at_half)] {
        println!(
            "{name:<15} {:.4}: accuracy {} sensitivity {} specificity {} far {} frr {}",
            point.threshold,
            opt(point.accuracy),
            opt(point.sensitivity),
            opt(point.specificity),
            opt(point.far_paper),
            opt(point.frr_paper),
        );
    }
    for row in &rep.calibrated.categories.rows {
        println!("  {:<30} n={:<5} {:?} {:.4}", row.category.as_str(), row.count, row.kind, row.rate);
    }
    for missing in &rep.calibrated.categories.missing {
        println!("  {:<30} absent", missing.as_str());
    }
}

/// Runs one command; `Ok(false)` means a verify rejection.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Synth(c) => {
            let cfg = c.config()?;
            let s = pipeline::run_synth(&cfg)?;
            println!("wrote {} records to {}", s.records, s.manifest.display());
        }
        Command::Extract(c) => {
            let cfg = c.config()?;
            let s = pipeline::run_extract(&cfg)?;
            println!("extracted {} sequences, {} already cached", s.extracted, s.cached);
        }
        Command::Split(c) => {
            let cfg = c.config()?;
            let split = pipeline::run_split(&cfg)?;
            let p = split.provenance;
            println!("target {}/{}", split.plan.target.speaker, split.plan.target.word);
            println!(
                "records {} | unseen-speaker pool {} | held-out-word pool {} | working {} ({} genuine x{})",
                p.records, p.unseen_speaker_pool, p.heldout_word_pool, p.working_pool, p.positives,
                split.plan.oversample_factor
            );
            println!("train {} | test {} ({} working + {} holdout)", p.train, p.test, p.test_from_working, p.test - p.test_from_working);
        }
        Command::Train(c) => {
            let cfg = c.config()?;
            let s = pipeline::run_train(&cfg)?;
            println!(
                "trained {}/{} on {} samples ({} parameters): loss {:.4}, accuracy {:.4}",
                s.target.speaker, s.target.word, s.samples, s.parameters, s.final_loss, s.final_accuracy
            );
            for path in &s.checkpoints {
                println!("checkpoint {}", path.display());
            }
            eprintln!("pair training time: {:.1} s", s.seconds);
        }
        Command::Eval(c) => {
            let cfg = c.config()?;
            let report = pipeline::run_eval(&cfg)?;
            print_report(&report);
            let undefined = report.report.undefined();
            if !undefined.is_empty() {
                bail!("undefined metrics: {}", undefined.join(", "));
            }
        }
        Command::Verify(v) => {
            let cfg = v.common.config()?;
            let model = v.model.clone().unwrap_or_else(|| cfg.model_path());
            let sample = match &v.embedding {
                Some(path) => VerifySample::Embedding(path.clone()),
                None => VerifySample::Frames(v.frames.clone()),
            };
            let threshold = match cfg.eval.threshold {
                Some(t) => t,
                None => stored_threshold(&cfg)?.unwrap_or(0.5),
            };
            let verdict = pipeline::run_verify(&cfg, &model, &sample, threshold)?;
            println!(
                "score {:.6} threshold {:.6} {}",
                verdict.score,
                verdict.threshold,
                if verdict.accept { "accept" } else { "reject" }
            );
            return Ok(verdict.accept);
        }
        Command::Sweep(c) => {
            let cfg = c.config()?;
            let report = pipeline::run_sweep(&cfg, |row| {
                // One locked write per row keeps concurrent pairs from interleaving.
                eprint!("{}", pipeline::sweep_row_line(row));
            })?;
            print!("{}", report.to_tsv());
            for (name, mean) in &report.means {
                println!("mean {name} {}", opt(*mean));
            }
            let total: f64 = report.rows.iter().map(|r| r.seconds).sum();
            eprintln!("{} pairs, {} failed, {:.1} s of pair time", report.rows.len(), report.failures(), total);
        }
        Command::Variation(c) => {
            let cfg = c.config()?;
            let report = pipeline::run_variation(&cfg)?;
            for cell in &report.cells {
                println!("{:<30} {:<30} pairs {:<7} mean {:.4}", cell.first.as_str(), cell.second.as_str(), cell.pairs, cell.mean);
            }
        }
    }
    Ok(true)
}

/// Threshold recorded by the last `eval`, if any.
fn stored_threshold(cfg: &PipelineConfig) -> Result<Option<f64>> {
    let path = cfg.report_path();
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
    let report: PipelineReport =
        serde_json::from_str(&text).with_context(|| format!("{}: unreadable report", path.display()))?;
    Ok(Some(report.threshold))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let outcome = run(cli.command);
    eprintln!("wall time: {:.2} s", started.elapsed().as_secs_f64());
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
