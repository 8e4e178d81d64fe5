//! Interval training loop: pool plan, on-policy scoring, top-γ filtering and
//! plain gradient descent.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SyntheticDataset;
use super::policy::{ReferencePolicy, ToyPolicy};
use crate::curriculum::{build_pool_plan, keep_ratio, partition_pairs, MixingSchedule, DEFAULT_RHO_END, DEFAULT_RHO_START};
use crate::preference::{dpo_loss, nca_loss, LossKind, PreferencePair};
use crate::score::{score_pool, DampingConfig};
use crate::selection::{rank_and_truncate, retention_count, SelectionAudit};
use crate::{Error, PairId, Result};

/// How each interval's pool is reduced before the backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Score the pool with the current policy and keep the top-γ fraction.
    #[default]
    Sage,
    /// No pools and no selection: every pair, every epoch.
    Full,
    /// Uniform sample of the same size SAGE would keep.
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Sage, Strategy::Full, Strategy::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Sage => "sage",
            Strategy::Full => "full",
            Strategy::Random => "random",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?} (expected sage, full or random)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passes over each interval's retained subset (over the whole training
    /// split for [`Strategy::Full`]).
    pub epochs: usize,
    pub rho_start: [f64; 3],
    pub rho_end: [f64; 3],
    pub gamma_start: f64,
    pub gamma_end: f64,
    /// Nominal optimizer steps per interval; sets the number of pools.
    pub refresh_step: usize,
    pub loss_kind: LossKind,
    pub strategy: Strategy,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            alpha: 1.0,
            epsilon: crate::score::DEFAULT_EPSILON,
            learning_rate: 2.0,
            batch_size: 16,
            epochs: 3,
            rho_start: DEFAULT_RHO_START,
            rho_end: DEFAULT_RHO_END,
            gamma_start: 1.0,
            gamma_end: 0.4,
            refresh_step: 25,
            loss_kind: LossKind::Dpo,
            strategy: Strategy::Sage,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.beta) {
            problems.push(format!("beta must be positive, got {}", self.beta));
        }
        if !positive(self.alpha) {
            problems.push(format!("alpha must be positive, got {}", self.alpha));
        }
        if !positive(self.epsilon) {
            problems.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !positive(self.learning_rate) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_owned());
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_owned());
        }
        if self.refresh_step == 0 {
            problems.push("refresh_step must be at least 1".to_owned());
        }
        for (name, g) in [("gamma_start", self.gamma_start), ("gamma_end", self.gamma_end)] {
            if !(g > 0.0 && g <= 1.0) {
                problems.push(format!("{name} must lie in (0, 1], got {g}"));
            }
        }
        if let Err(Error::Config(mut schedule)) = MixingSchedule::new(self.rho_start, self.rho_end, 1) {
            problems.append(&mut schedule);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// `epochs · ⌈n / batch_size⌉`: the step budget of a full run.
    pub fn total_steps(&self, num_train: usize) -> usize {
        self.epochs * num_train.div_ceil(self.batch_size)
    }

    /// `K = ⌈total_steps / refresh_step⌉`, at least one.
    pub fn num_intervals(&self, num_train: usize) -> usize {
        self.total_steps(num_train).div_ceil(self.refresh_step).max(1)
    }
}

/// Mean batch loss and its gradient with respect to `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
}

/// Implicit rewards `(r_w, r_l)` of a pair under `policy` against `reference`.
pub fn pair_rewards(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
) -> Result<(f64, f64)> {
    let dist = policy.distribution(pair.prompt_id)?;
    let rw = beta * (dist.log_prob(pair.winner.response_id)? - reference.logprob(pair.prompt_id, pair.winner.response_id)?);
    let rl = beta * (dist.log_prob(pair.loser.response_id)? - reference.logprob(pair.prompt_id, pair.loser.response_id)?);
    Ok((rw, rl))
}

/// Mean pairwise loss over `pairs` with the analytic gradient
/// `Σ_y ∂loss/∂r_y · β · (φ(y) − E_π[φ])`.
pub fn batch_loss_and_grad(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    pairs: &[&PreferencePair],
    config: &TrainerConfig,
) -> Result<BatchGradient> {
    if pairs.is_empty() {
        return Err(Error::domain("batch must contain at least one pair"));
    }
    let features = policy.features();
    let mut grad = vec![0.0; features.dim()];
    let mut loss = 0.0;
    for pair in pairs {
        let dist = policy.distribution(pair.prompt_id)?;
        let (rw, rl) = pair_rewards(policy, reference, pair, config.beta)?;
        let out = match config.loss_kind {
            LossKind::Dpo => dpo_loss(rw, rl),
            LossKind::Nca => nca_loss(&[rw, rl], config.alpha)?,
        };
        loss += out.loss;
        let (gw, gl) = (out.d_loss_d_reward[0], out.d_loss_d_reward[1]);
        let phi_w = features.feature(pair.prompt_id, pair.winner.response_id)?;
        let phi_l = features.feature(pair.prompt_id, pair.loser.response_id)?;
        let mean = dist.expected_feature();
        for (i, g) in grad.iter_mut().enumerate() {
            *g += config.beta * (gw * phi_w[i] + gl * phi_l[i] - (gw + gl) * mean[i]);
        }
    }
    let n = pairs.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(BatchGradient {
        loss: loss / n,
        grad,
        grad_norm,
    })
}

/// Fraction of pairs whose preferred response gets the strictly larger
/// implicit reward. Ties count as errors.
pub fn evaluate_preference_accuracy(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    held_out: &[PreferencePair],
    beta: f64,
) -> Result<f64> {
    if held_out.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty set"));
    }
    let mut correct = 0usize;
    for pair in held_out {
        let (rw, rl) = pair_rewards(policy, reference, pair, beta)?;
        if rw > rl {
            correct += 1;
        }
    }
    Ok(correct as f64 / held_out.len() as f64)
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub interval: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Size of the subset the step was drawn from.
    pub retained: usize,
    /// Cumulative response tokens backpropagated so far.
    pub effective_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub selections: Vec<SelectionAudit>,
    pub num_intervals: usize,
    /// Pair ids processed per interval, in ascending id order.
    pub retained_per_interval: Vec<Vec<PairId>>,
}

impl TrainingLog {
    pub fn effective_tokens(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.effective_tokens)
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.grad_norm).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub log: TrainingLog,
    pub policy: ToyPolicy,
    pub reference: ReferencePolicy,
}

impl TrainingOutcome {
    pub fn held_out_accuracy(&self, dataset: &SyntheticDataset, beta: f64) -> Result<f64> {
        evaluate_preference_accuracy(&self.policy, &self.reference, &dataset.held_out, beta)
    }
}

const BATCH_STREAM: u64 = 1;
const SELECTION_STREAM: u64 = 2;

struct Loop<'a> {
    config: &'a TrainerConfig,
    reference: ReferencePolicy,
    policy: ToyPolicy,
    by_id: BTreeMap<PairId, &'a PreferencePair>,
    batch_rng: ChaCha8Rng,
    log: TrainingLog,
}

impl Loop<'_> {
    /// `epochs` shuffled passes over `ids` in mini-batches.
    fn run_passes(&mut self, interval: usize, ids: &[PairId]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::domain(format!("interval {interval}: nothing retained")));
        }
        let mut order = ids.to_vec();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.batch_rng);
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&PreferencePair> = chunk.iter().map(|id| self.by_id[id]).collect();
                let step = batch_loss_and_grad(&self.policy, &self.reference, &batch, self.config)?;
                for (t, g) in self.policy.theta.iter_mut().zip(&step.grad) {
                    *t -= self.config.learning_rate * g;
                }
                let tokens: u64 = batch.iter().map(|p| p.pair_length()).sum();
                let cumulative = self.log.effective_tokens() + tokens;
                self.log.steps.push(StepRecord {
                    step: self.log.steps.len(),
                    interval,
                    loss: step.loss,
                    grad_norm: step.grad_norm,
                    retained: ids.len(),
                    effective_tokens: cumulative,
                });
            }
        }
        self.log.retained_per_interval.push(ids.to_vec());
        Ok(())
    }
}

/// Runs the interval loop on the training split of `dataset`.
///
/// The reference policy is uniform (`θ_ref = 0`) and the trainable policy
/// starts there. Scores for an interval are computed once with the
/// parameters at the start of that interval.
pub fn train(dataset: &SyntheticDataset, config: &TrainerConfig, seed: u64) -> Result<TrainingOutcome> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::domain("training split is empty"));
    }
    let reference = ReferencePolicy::new(ToyPolicy::zeros(dataset.features.clone()));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed);
    batch_rng.set_stream(BATCH_STREAM);
    let mut state = Loop {
        config,
        policy: reference.to_policy(),
        reference,
        by_id: dataset.train.iter().map(|p| (p.id, p)).collect(),
        batch_rng,
        log: TrainingLog::default(),
    };

    if config.strategy == Strategy::Full {
        let ids: Vec<PairId> = state.by_id.keys().copied().collect();
        state.log.num_intervals = 1;
        state.run_passes(0, &ids)?;
        return Ok(TrainingOutcome {
            log: state.log,
            policy: state.policy,
            reference: state.reference,
        });
    }

    let (strata, missing) = partition_pairs(&dataset.train);
    if !missing.is_empty() {
        return Err(Error::domain(format!("{} training pairs lack annotations", missing.len())));
    }
    let num_intervals = config.num_intervals(dataset.train.len());
    let schedule = MixingSchedule::new(config.rho_start, config.rho_end, num_intervals)?;
    let plan = build_pool_plan(&strata, &schedule, seed)?;
    state.log.num_intervals = num_intervals;
    let damping = DampingConfig::new(config.epsilon)?;
    let mut selection_rng = ChaCha8Rng::seed_from_u64(seed);
    selection_rng.set_stream(SELECTION_STREAM);

    for (k, pool) in plan.pools.iter().enumerate() {
        if pool.is_empty() {
            continue;
        }
        let gamma = keep_ratio(config.gamma_start, config.gamma_end, num_intervals, k)?;
        let pairs: Vec<PreferencePair> = pool.iter().map(|id| state.by_id[id].clone()).collect();
        let rewards = pairs
            .iter()
            .map(|p| pair_rewards(&state.policy, &state.reference, p, config.beta))
            .collect::<Result<Vec<_>>>()?;
        let records = score_pool(&pairs, &rewards, &damping)?;
        let selection = rank_and_truncate(&records, gamma)?;

        let retained: BTreeSet<PairId> = match config.strategy {
            Strategy::Sage => selection.retained_ids.iter().copied().collect(),
            Strategy::Random => {
                let n_keep = retention_count(pool.len(), gamma)?;
                index::sample(&mut selection_rng, pool.len(), n_keep)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            }
            Strategy::Full => unreachable!("full strategy returns before pooling"),
        };
        let mut audit = selection.audit(k);
        if config.strategy == Strategy::Random {
            audit.retained = retained.len();
            audit.dropped = pool.len() - retained.len();
            audit.threshold = None;
        }
        state.log.selections.push(audit);
        let ids: Vec<PairId> = retained.into_iter().collect();
        state.run_passes(k, &ids)?;
    }

    Ok(TrainingOutcome {
        log: state.log,
        policy: state.policy,
        reference: state.reference,
    })
}
