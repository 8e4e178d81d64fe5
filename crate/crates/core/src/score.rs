//! Newton-inspired, stability-aware utility score for preference pairs.
//!
//! Each response contributes `g² / (h + ε)` where, for confidence
//! `p = σ(z·r)`, the gradient proxy is `g² = (1 − p)²` and the curvature proxy
//! is `h = p(1 − p)`. The pair score sums both responses and divides by the
//! pair's total response length. Large scores mark confident errors: strong
//! gradient with low curvature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::preference::{logistic, PreferencePair, RoleSign};
use crate::{Error, PairId, Result};

/// Confidences are kept at least this far from 0 and 1.
pub const CONFIDENCE_CLAMP: f64 = 1e-12;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreComponents {
    pub confidence_p: f64,
    pub grad_sq: f64,
    pub curvature_h: f64,
}

impl ScoreComponents {
    pub fn from_confidence(p: f64) -> Self {
        let miss = 1.0 - p;
        Self {
            confidence_p: p,
            grad_sq: miss * miss,
            curvature_h: p * miss,
        }
    }

    /// `g² / (h + ε)` from the stored proxies.
    pub fn contribution(&self, epsilon: f64) -> f64 {
        self.grad_sq / (self.curvature_h + epsilon)
    }
}

/// Tikhonov damping added to the curvature proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingConfig {
    pub epsilon: f64,
}

impl DampingConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub pair_id: PairId,
    pub winner: ScoreComponents,
    pub loser: ScoreComponents,
    pub pair_length: u64,
    pub epsilon: f64,
    pub sage_score: f64,
}

impl ScoreRecord {
    /// Recomputes the score from the stored components.
    pub fn recompute(&self) -> f64 {
        (self.winner.contribution(self.epsilon) + self.loser.contribution(self.epsilon))
            / self.pair_length as f64
    }

    pub fn to_line(&self) -> ScoreLine {
        ScoreLine {
            pair_id: self.pair_id,
            p_w: self.winner.confidence_p,
            p_l: self.loser.confidence_p,
            g2_w: self.winner.grad_sq,
            g2_l: self.loser.grad_sq,
            h_w: self.winner.curvature_h,
            h_l: self.loser.curvature_h,
            length: self.pair_length,
            score: self.sage_score,
        }
    }
}

/// Flat JSON-lines form of a [`ScoreRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub pair_id: PairId,
    pub p_w: f64,
    pub p_l: f64,
    pub g2_w: f64,
    pub g2_l: f64,
    pub h_w: f64,
    pub h_l: f64,
    pub length: u64,
    pub score: f64,
}

/// `σ(z·r)`: probability that the response is classified consistently with
/// its role.
pub fn response_confidence(reward: f64, role: RoleSign) -> f64 {
    logistic(role.value() * reward)
}

/// `(1 − p)² / (p(1 − p) + ε)` for `p ∈ (0, 1)` and `ε ≥ 0`.
pub fn response_contribution(p: f64, epsilon: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("confidence must lie in (0, 1), got {p}")));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::domain(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    Ok(ScoreComponents::from_confidence(p).contribution(epsilon))
}

fn clamped(p: f64) -> f64 {
    p.clamp(CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)
}

pub fn sage_score(
    pair: &PreferencePair,
    reward_w: f64,
    reward_l: f64,
    cfg: &DampingConfig,
) -> Result<ScoreRecord> {
    if !reward_w.is_finite() || !reward_l.is_finite() {
        return Err(Error::domain(format!(
            "pair {}: non-finite rewards ({reward_w}, {reward_l})",
            pair.id
        )));
    }
    let pair_length = pair.pair_length();
    if pair_length == 0 {
        return Err(Error::domain(format!("pair {}: zero length", pair.id)));
    }
    let p_w = clamped(response_confidence(reward_w, RoleSign::Winner));
    let p_l = clamped(response_confidence(reward_l, RoleSign::Loser));
    let total = response_contribution(p_w, cfg.epsilon)? + response_contribution(p_l, cfg.epsilon)?;
    Ok(ScoreRecord {
        pair_id: pair.id,
        winner: ScoreComponents::from_confidence(p_w),
        loser: ScoreComponents::from_confidence(p_l),
        pair_length,
        epsilon: cfg.epsilon,
        sage_score: total / pair_length as f64,
    })
}

/// Scores a pool in order. Work fans out across threads but every result is
/// written to its own slot, so output is identical to sequential evaluation.
pub fn score_pool(
    pairs: &[PreferencePair],
    rewards: &[(f64, f64)],
    cfg: &DampingConfig,
) -> Result<Vec<ScoreRecord>> {
    if pairs.len() != rewards.len() {
        return Err(Error::domain(format!(
            "{} pairs but {} reward tuples",
            pairs.len(),
            rewards.len()
        )));
    }
    pairs
        .par_iter()
        .zip(rewards.par_iter())
        .map(|(pair, &(rw, rl))| sage_score(pair, rw, rl, cfg))
        .collect()
}
