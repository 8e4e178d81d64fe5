//! `sage`: curation, synthetic annotation, training, strategy comparison,
//! sensitivity sweeps and stability statistics.
//!
//! Every command writes its artifacts plus a `manifest.json` into `--out`.
//! Verbosity follows `SAGE_LOG_LEVEL` (default `info`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::json;

use sage_core::curriculum::partition_difficulty;
use sage_core::experiment::{compare_strategies, run_experiment, sweep, ExperimentConfig, RunSummary, SweepParam};
use sage_core::ingest::{self, fixtures, QueryNormalization};
use sage_core::metrics::{rows_csv, stability_stats, steps_csv, RunManifest};
use sage_core::testbed::{generate_synthetic_dataset, StepRecord, Strategy};

#[derive(Parser)]
#[command(name = "sage", version, about = "Stability-aware preference-pair selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deduplicate a JSONL corpus and drop pairs with identical final answers.
    Curate(CurateArgs),
    /// Generate the synthetic corpus and its judge-style annotations.
    AnnotateSynthetic(RunArgs),
    /// Train one strategy on the synthetic corpus.
    Train(TrainArgs),
    /// Train every strategy over several seeds.
    Compare(CompareArgs),
    /// One run per value of `gamma` or `refresh_step`.
    Sweep(SweepArgs),
    /// Windowed gradient-norm statistics of a training log.
    Stats(StatsArgs),
}

#[derive(Args)]
struct CurateArgs {
    /// JSON lines of `{query, chosen, rejected[, ground_truth]}`.
    #[arg(long)]
    input: PathBuf,
    /// JSON lines of `{pair_id, annotation}` judge documents.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "whitespace")]
    normalization: Normalization,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Normalization {
    Exact,
    Whitespace,
    WhitespaceCaseFold,
}

impl From<Normalization> for QueryNormalization {
    fn from(n: Normalization) -> Self {
        match n {
            Normalization::Exact => QueryNormalization::Exact,
            Normalization::Whitespace => QueryNormalization::Whitespace,
            Normalization::WhitespaceCaseFold => QueryNormalization::WhitespaceCaseFold,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment JSON with optional `dataset` and `trainer` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `dataset.seed`; also seeds training.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated seeds; defaults to 0..10.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `gamma` (constant keep ratio) or `refresh_step`.
    #[arg(long)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Comma-separated seeds; defaults to `--seed` or the config's seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Args)]
struct StatsArgs {
    /// Training log JSONL written by `train`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 25)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SAGE_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Curate(a) => curate(a),
        Command::AnnotateSynthetic(a) => annotate_synthetic(a),
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Collects artifacts for the manifest while writing them.
struct Outputs {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Outputs {
    fn new(dir: &Path, command: &str, config: serde_json::Value, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_owned(),
            manifest: RunManifest::start(command, config, seed),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.record(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finish();
        let path = self.dir.join("manifest.json");
        self.manifest.record(&path);
        fs::write(&path, self.manifest.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
        info!("wrote {} artifacts to {}", self.manifest.artifacts.len(), self.dir.display());
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, u64)> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::from_json_str(&read(path)?)
            .with_context(|| format!("invalid config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    let seed = args.seed.unwrap_or(config.dataset.seed);
    Ok((config.with_seed(seed), seed))
}

fn curate(args: CurateArgs) -> Result<()> {
    let text = read(&args.input)?;
    let normalization = QueryNormalization::from(args.normalization);
    let config = json!({
        "input": args.input,
        "annotations": args.annotations,
        "normalization": normalization,
    });
    let mut out = Outputs::new(&args.out, "curate", config, None)?;

    let (records, mut rejects) = ingest::read_records_jsonl(&text);
    let parse_rejected = rejects.len();
    let outcome = ingest::curate(&records, normalization);
    rejects.extend(outcome.rejects.iter().cloned());
    out.write("kept.jsonl", ingest::to_jsonl(&outcome.kept)?)?;
    out.write("flagged.jsonl", ingest::to_jsonl(&outcome.flagged)?)?;

    let mut summary = json!({
        "parse_rejected": parse_rejected,
        "records": outcome.input,
        "duplicates_removed": outcome.duplicates_removed,
        "degenerate_removed": outcome.degenerate_removed,
        "kept": outcome.kept.len(),
        "flagged": outcome.flagged.len(),
    });

    if let Some(path) = &args.annotations {
        let parsed = ingest::parse_annotation_lines(&read(path)?);
        let report = ingest::stratum_report(&parsed.annotations);
        summary["annotations_parsed"] = json!(parsed.annotations.len());
        summary["annotations_rejected"] = json!(parsed.rejects.len());
        summary["strata"] = json!({
            "easy": report.strata_sizes[0],
            "medium": report.strata_sizes[1],
            "hard": report.strata_sizes[2],
        });
        out.write("stratum_report.csv", report.to_csv()?)?;
        out.write("strata.csv", partition_difficulty(&parsed.annotations).to_csv()?)?;
        rejects.extend(parsed.rejects);
    }
    out.write("rejects.jsonl", ingest::to_jsonl(&rejects)?)?;
    out.write_json("curation_summary.json", &summary)?;
    info!(
        "curated {} records: {} duplicates, {} degenerate, {} kept",
        outcome.input,
        outcome.duplicates_removed,
        outcome.degenerate_removed,
        outcome.kept.len()
    );
    out.finish()
}

fn annotate_synthetic(args: RunArgs) -> Result<()> {
    let (config, seed) = load_config(&args)?;
    let dataset = generate_synthetic_dataset(&config.dataset)?;
    let mut out = Outputs::new(&args.out, "annotate-synthetic", serde_json::to_value(&config)?, Some(seed))?;

    let pairs: Vec<_> = dataset
        .train
        .iter()
        .map(|p| ("train", p))
        .chain(dataset.held_out.iter().map(|p| ("held_out", p)))
        .map(|(split, p)| {
            json!({
                "pair_id": p.id,
                "split": split,
                "prompt_id": p.prompt_id,
                "winner": {"response_id": p.winner.response_id, "token_length": p.winner.token_length},
                "loser": {"response_id": p.loser.response_id, "token_length": p.loser.token_length},
                "margin": dataset.truth[&p.id].margin,
                "flipped": dataset.truth[&p.id].flipped,
            })
        })
        .collect();
    out.write("pairs.jsonl", ingest::to_jsonl(&pairs)?)?;

    let annotations = dataset.annotations();
    out.write("annotations.jsonl", fixtures::annotation_lines(&annotations))?;
    let report = ingest::stratum_report(&annotations);
    out.write("stratum_report.csv", report.to_csv()?)?;
    out.write("strata.csv", partition_difficulty(&annotations).to_csv()?)?;
    info!("annotated {} pairs; strata {:?}", annotations.len(), report.strata_sizes);
    out.finish()
}

fn train(args: TrainArgs) -> Result<()> {
    let (mut config, seed) = load_config(&args.run)?;
    if let Some(strategy) = args.strategy {
        config.trainer.strategy = strategy;
    }
    let mut out = Outputs::new(&args.run.out, "train", serde_json::to_value(&config)?, Some(seed))?;
    let run = run_experiment(&config, seed)?;
    let log = &run.outcome.log;
    out.write("training_log.jsonl", log.to_jsonl()?)?;
    out.write("steps.csv", steps_csv(log)?)?;
    out.write("selections.jsonl", ingest::to_jsonl(&log.selections)?)?;
    out.write_json("summary.json", &run.summary)?;
    info!(
        "{} seed {seed}: held-out accuracy {:.4}, {} steps, {} effective tokens",
        run.summary.strategy.as_str(),
        run.summary.held_out_accuracy,
        run.summary.steps,
        run.summary.effective_tokens
    );
    out.finish()
}

/// Per-strategy aggregate over the seeds of a comparison.
#[derive(Serialize)]
struct StrategyAggregate {
    strategy: Strategy,
    runs: usize,
    mean_accuracy: f64,
    mean_grad_norm_variance: f64,
    mean_effective_tokens: f64,
}

#[derive(Serialize)]
struct CompareRow {
    seed: u64,
    strategy: Strategy,
    accuracy: f64,
    final_loss: f64,
    steps: usize,
    effective_tokens: u64,
    grad_norm_mean: f64,
    grad_norm_variance: f64,
    wall_time: f64,
}

impl From<&RunSummary> for CompareRow {
    fn from(s: &RunSummary) -> Self {
        Self {
            seed: s.seed,
            strategy: s.strategy,
            accuracy: s.held_out_accuracy,
            final_loss: s.final_loss,
            steps: s.steps,
            effective_tokens: s.effective_tokens,
            grad_norm_mean: s.grad_norm_mean,
            grad_norm_variance: s.grad_norm_variance,
            wall_time: s.wall_time_s,
        }
    }
}

fn compare(args: CompareArgs) -> Result<()> {
    let (config, _) = load_config(&args.run)?;
    let seeds = if args.seeds.is_empty() { (0..10).collect() } else { args.seeds };
    let mut out = Outputs::new(&args.run.out, "compare", json!({"experiment": config, "seeds": seeds}), None)?;
    let runs = compare_strategies(&config, &Strategy::ALL, &seeds)?;
    out.write("compare.csv", rows_csv(&runs.iter().map(CompareRow::from).collect::<Vec<_>>())?)?;

    let aggregates: Vec<StrategyAggregate> = Strategy::ALL
        .iter()
        .map(|&strategy| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.strategy == strategy).collect();
            let n = mine.len() as f64;
            StrategyAggregate {
                strategy,
                runs: mine.len(),
                mean_accuracy: mine.iter().map(|r| r.held_out_accuracy).sum::<f64>() / n,
                mean_grad_norm_variance: mine.iter().map(|r| r.grad_norm_variance).sum::<f64>() / n,
                mean_effective_tokens: mine.iter().map(|r| r.effective_tokens as f64).sum::<f64>() / n,
            }
        })
        .collect();
    for a in &aggregates {
        info!(
            "{:<6} accuracy {:.4}  grad-norm variance {:.3e}  tokens {:.0}",
            a.strategy.as_str(),
            a.mean_accuracy,
            a.mean_grad_norm_variance,
            a.mean_effective_tokens
        );
    }
    out.write_json("compare_summary.json", &aggregates)?;
    out.finish()
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let (mut config, seed) = load_config(&args.run)?;
    if let Some(strategy) = args.strategy {
        config.trainer.strategy = strategy;
    }
    let seeds = if args.seeds.is_empty() { vec![seed] } else { args.seeds };
    let manifest_config = json!({"experiment": config, "param": args.param, "values": args.values, "seeds": seeds});
    let mut out = Outputs::new(&args.run.out, "sweep", manifest_config, None)?;
    let rows = sweep(&config, args.param, &args.values, &seeds)?;
    out.write("sweep.csv", rows_csv(&rows)?)?;
    out.finish()
}

fn stats(args: StatsArgs) -> Result<()> {
    let text = read(&args.input)?;
    let steps: Vec<StepRecord> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: not a step record", args.input.display(), i + 1)))
        .collect::<Result<_>>()?;
    if steps.is_empty() {
        bail!("{} contains no steps", args.input.display());
    }
    let config = json!({"input": args.input, "window": args.window});
    let mut out = Outputs::new(&args.out, "stats", config, None)?;
    let grad_norms: Vec<f64> = steps.iter().map(|s| s.grad_norm).collect();
    let stats = stability_stats(&grad_norms, args.window)?;
    out.write("stability_windows.csv", stats.windows_csv()?)?;
    out.write_json(
        "stability.json",
        &json!({
            "window": stats.window,
            "steps": stats.steps,
            "mean": stats.mean,
            "variance": stats.variance,
            "spike_count": stats.spike_count(),
            "spike_steps": stats.spike_steps,
            "single_window_fallback": stats.single_window_fallback,
        }),
    )?;
    out.finish()
}
