//! Experiment configuration and multi-run harnesses on the synthetic testbed.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metrics::mean_variance;
use crate::testbed::{generate_synthetic_dataset, train, Strategy, SyntheticDataset, SyntheticDatasetSpec, TrainerConfig, TrainingOutcome};
use crate::{Error, Result};

/// A complete experiment: how to build the corpus and how to train on it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetSpec,
    pub trainer: TrainerConfig,
}

impl ExperimentConfig {
    /// Parses a JSON document. Missing keys take their defaults; unknown keys,
    /// type errors and out-of-range values are all reported together.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let defaults = serde_json::to_value(Self::default())?;
        let mut problems = Vec::new();
        unknown_keys(&value, &defaults, "", &mut problems);

        let mut config = Self::default();
        if let Some(obj) = value.as_object() {
            if let Some(v) = obj.get("dataset") {
                match section(&defaults["dataset"], v) {
                    Ok(d) => config.dataset = d,
                    Err(e) => problems.push(format!("dataset: {e}")),
                }
            }
            if let Some(v) = obj.get("trainer") {
                match section(&defaults["trainer"], v) {
                    Ok(t) => config.trainer = t,
                    Err(e) => problems.push(format!("trainer: {e}")),
                }
            }
        }
        if let Err(Error::Config(mut more)) = config.validate() {
            problems.append(&mut more);
        }
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, result) in [("dataset", self.dataset.validate()), ("trainer", self.trainer.validate())] {
            match result {
                Ok(()) => {}
                Err(Error::Config(list)) => problems.extend(list.into_iter().map(|p| format!("{name}: {p}"))),
                Err(e) => problems.push(format!("{name}: {e}")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Copy with the dataset seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.dataset.seed = seed;
        c
    }
}

/// Overlays `value` on the section defaults so that unknown keys (already
/// reported) do not mask type errors in known ones.
fn section<T: serde::de::DeserializeOwned>(defaults: &Value, value: &Value) -> std::result::Result<T, String> {
    let Some(obj) = value.as_object() else {
        return Err("expected an object".into());
    };
    let mut merged = defaults.clone();
    for (k, v) in obj {
        if defaults.get(k).is_some() {
            merged[k] = v.clone();
        }
    }
    serde_json::from_value(merged).map_err(|e| e.to_string())
}

fn unknown_keys(value: &Value, defaults: &Value, path: &str, out: &mut Vec<String>) {
    let (Some(obj), Some(known)) = (value.as_object(), defaults.as_object()) else {
        return;
    };
    for (k, v) in obj {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match known.get(k) {
            None => out.push(format!("unknown key {here:?}")),
            Some(d) => unknown_keys(v, d, &here, out),
        }
    }
}

/// Headline numbers of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub held_out_accuracy: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub num_intervals: usize,
    pub effective_tokens: u64,
    pub grad_norm_mean: f64,
    pub grad_norm_variance: f64,
    /// Host dependent; informational only.
    pub wall_time_s: f64,
    pub theta: Vec<f64>,
}

pub struct RunOutput {
    pub dataset: SyntheticDataset,
    pub outcome: TrainingOutcome,
    pub summary: RunSummary,
}

fn summarize(dataset: &SyntheticDataset, outcome: &TrainingOutcome, config: &TrainerConfig, seed: u64, wall: f64) -> Result<RunSummary> {
    let (grad_norm_mean, grad_norm_variance) = mean_variance(&outcome.log.grad_norms());
    Ok(RunSummary {
        strategy: config.strategy,
        seed,
        held_out_accuracy: outcome.held_out_accuracy(dataset, config.beta)?,
        final_loss: outcome.log.steps.last().map_or(f64::NAN, |s| s.loss),
        steps: outcome.log.steps.len(),
        num_intervals: outcome.log.num_intervals,
        effective_tokens: outcome.log.effective_tokens(),
        grad_norm_mean,
        grad_norm_variance,
        wall_time_s: wall,
        theta: outcome.policy.theta.clone(),
    })
}

fn train_summarized(dataset: &SyntheticDataset, config: &TrainerConfig, seed: u64) -> Result<(TrainingOutcome, RunSummary)> {
    let start = Instant::now();
    let outcome = train(dataset, config, seed)?;
    let summary = summarize(dataset, &outcome, config, seed, start.elapsed().as_secs_f64())?;
    Ok((outcome, summary))
}

/// Generates the corpus with `seed` and trains on it with the same seed.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let config = config.with_seed(seed);
    config.validate()?;
    let dataset = generate_synthetic_dataset(&config.dataset)?;
    let (outcome, summary) = train_summarized(&dataset, &config.trainer, seed)?;
    Ok(RunOutput {
        dataset,
        outcome,
        summary,
    })
}

/// Every strategy on every seed; each seed's corpus is shared by its runs.
/// Results are ordered by seed, then by `strategies`.
pub fn compare_strategies(config: &ExperimentConfig, strategies: &[Strategy], seeds: &[u64]) -> Result<Vec<RunSummary>> {
    config.validate()?;
    let per_seed: Vec<Vec<RunSummary>> = seeds
        .par_iter()
        .map(|&seed| {
            let dataset = generate_synthetic_dataset(&config.with_seed(seed).dataset)?;
            strategies
                .par_iter()
                .map(|&strategy| {
                    let trainer = TrainerConfig {
                        strategy,
                        ..config.trainer.clone()
                    };
                    train_summarized(&dataset, &trainer, seed).map(|(_, s)| s)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Constant keep ratio `γ_start = γ_end = value`.
    Gamma,
    RefreshStep,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepParam::Gamma),
            "refresh_step" => Ok(SweepParam::RefreshStep),
            _ => Err(Error::config(format!("unknown sweep parameter {s:?} (expected gamma or refresh_step)"))),
        }
    }
}

impl SweepParam {
    pub fn apply(self, trainer: &TrainerConfig, value: f64) -> Result<TrainerConfig> {
        let mut t = trainer.clone();
        match self {
            SweepParam::Gamma => {
                t.gamma_start = value;
                t.gamma_end = value;
            }
            SweepParam::RefreshStep => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::config(format!("refresh_step must be a positive integer, got {value}")));
                }
                t.refresh_step = value as usize;
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// One row of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub effective_tokens: u64,
    pub wall_time: f64,
    pub grad_norm_variance: f64,
}

/// One run per `(value, seed)`, all values sharing each seed's corpus.
pub fn sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let trainers: Vec<TrainerConfig> = values
        .iter()
        .map(|&v| param.apply(&config.trainer, v))
        .collect::<Result<_>>()?;
    let per_seed: Vec<Vec<SweepRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let dataset = generate_synthetic_dataset(&config.with_seed(seed).dataset)?;
            values
                .par_iter()
                .zip(&trainers)
                .map(|(&value, trainer)| {
                    let (_, s) = train_summarized(&dataset, trainer, seed)?;
                    Ok(SweepRow {
                        value,
                        seed,
                        accuracy: s.held_out_accuracy,
                        effective_tokens: s.effective_tokens,
                        wall_time: s.wall_time_s,
                        grad_norm_variance: s.grad_norm_variance,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}
