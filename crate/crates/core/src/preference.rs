//! Preference pairs, the implicit reward and the pairwise/contrastive losses.
//!
//! Losses are expressed in terms of implicit rewards rather than raw
//! log-probabilities, so any policy backend that can produce
//! `β · (log π − log μ)` can reuse them. Every loss also returns its analytic
//! derivative with respect to each reward input, which the testbed chains
//! through the policy parameters.

use serde::{Deserialize, Serialize};

use crate::curriculum::Annotation;
use crate::{Error, PairId, Result};

/// Role of a response inside a pair: `+1` for the preferred response, `-1`
/// for the rejected one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoleSign {
    Winner,
    Loser,
}

impl RoleSign {
    pub fn value(self) -> f64 {
        match self {
            RoleSign::Winner => 1.0,
            RoleSign::Loser => -1.0,
        }
    }
}

/// One response slot of a preference pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRef {
    /// Index of the response inside its prompt's candidate set.
    pub response_id: u32,
    /// Simulated or measured response length in tokens.
    pub token_length: u32,
    pub role_sign: RoleSign,
}

/// A `(prompt, preferred, rejected)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: PairId,
    pub prompt_id: u32,
    pub winner: ResponseRef,
    pub loser: ResponseRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Annotation>,
}

impl PreferencePair {
    /// Builds a pair from `(response_id, token_length)` slots.
    pub fn new(
        id: PairId,
        prompt_id: u32,
        winner: (u32, u32),
        loser: (u32, u32),
    ) -> Result<Self> {
        if winner.0 == loser.0 {
            return Err(Error::domain(format!(
                "pair {id}: winner and loser both reference response {}",
                winner.0
            )));
        }
        if winner.1 == 0 || loser.1 == 0 {
            return Err(Error::domain(format!(
                "pair {id}: responses must have at least one token"
            )));
        }
        Ok(Self {
            id,
            prompt_id,
            winner: ResponseRef {
                response_id: winner.0,
                token_length: winner.1,
                role_sign: RoleSign::Winner,
            },
            loser: ResponseRef {
                response_id: loser.0,
                token_length: loser.1,
                role_sign: RoleSign::Loser,
            },
            annotation: None,
        })
    }

    pub fn with_annotation(mut self, annotation: Annotation) -> Self {
        self.annotation = Some(annotation);
        self
    }

    /// Total response tokens across both responses.
    pub fn pair_length(&self) -> u64 {
        u64::from(self.winner.token_length) + u64::from(self.loser.token_length)
    }
}

/// β-scaled log-ratio between the trainable and the reference policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitReward {
    pub value: f64,
    pub beta: f64,
}

/// Loss value together with `∂loss/∂reward_i` for every reward input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub d_loss_d_reward: Vec<f64>,
}

/// Which preference objective to optimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Dpo,
    Nca,
}

/// Numerically stable `1 / (1 + e^{-t})`.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log σ(t) = −softplus(−t)`.
pub fn log_logistic(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

pub fn implicit_reward(
    policy_logprob: f64,
    reference_logprob: f64,
    beta: f64,
) -> Result<ImplicitReward> {
    if !policy_logprob.is_finite() || !reference_logprob.is_finite() {
        return Err(Error::domain(format!(
            "log-probabilities must be finite (policy {policy_logprob}, reference {reference_logprob})"
        )));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    Ok(ImplicitReward {
        value: beta * (policy_logprob - reference_logprob),
        beta,
    })
}

/// Bradley–Terry pairwise loss `−log σ(r_w − r_l)`.
pub fn dpo_loss(reward_w: f64, reward_l: f64) -> LossOutput {
    let margin = reward_w - reward_l;
    // 1 − σ(Δ) written as σ(−Δ) keeps precision for large positive margins.
    let residual = logistic(-margin);
    LossOutput {
        loss: -log_logistic(margin),
        d_loss_d_reward: vec![-residual, residual],
    }
}

/// Softmax of `rewards / alpha`, with max subtraction.
pub fn nca_weights(rewards: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::domain("NCA needs at least one reward"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::domain(format!("alpha must be positive, got {alpha}")));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::domain(format!("non-finite reward {bad}")));
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rewards.iter().map(|r| ((r - max) / alpha).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Noise-contrastive loss `−Σ_i [w_i log σ(r_i) + (1/K) log σ(−r_i)]`.
///
/// The weights depend on the rewards, so the gradient carries the softmax
/// Jacobian term `(w_j/α)(log σ(r_j) − Σ_i w_i log σ(r_i))`.
pub fn nca_loss(rewards: &[f64], alpha: f64) -> Result<LossOutput> {
    let weights = nca_weights(rewards, alpha)?;
    let inv_k = 1.0 / rewards.len() as f64;

    let log_pos: Vec<f64> = rewards.iter().map(|&r| log_logistic(r)).collect();
    let weighted_log_pos: f64 = weights.iter().zip(&log_pos).map(|(w, l)| w * l).sum();

    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(rewards.len());
    for ((&r, &w), &lp) in rewards.iter().zip(&weights).zip(&log_pos) {
        loss -= w * lp + inv_k * log_logistic(-r);
        let direct = -w * logistic(-r) + inv_k * logistic(r);
        let through_weights = -(w / alpha) * (lp - weighted_log_pos);
        grad.push(direct + through_weights);
    }
    Ok(LossOutput {
        loss,
        d_loss_d_reward: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut down = x.to_vec();
                up[i] += h;
                down[i] -= h;
                (f(&up) - f(&down)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(50.0) - 1.0).abs() < 1e-15);
        assert!((logistic(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!(logistic(-700.0) >= 0.0 && logistic(700.0) <= 1.0);
        assert!(log_logistic(-700.0).is_finite());
        assert!((log_logistic(-700.0) + 700.0).abs() < 1e-9);
    }

    #[test]
    fn implicit_reward_examples() {
        assert_eq!(implicit_reward(-2.0, -2.0, 0.1).unwrap().value, 0.0);
        assert!((implicit_reward(-1.0, -2.0, 0.1).unwrap().value - 0.1).abs() < 1e-15);
        assert!((implicit_reward(-3.5, -1.5, 0.5).unwrap().value + 1.0).abs() < 1e-15);
        assert!(implicit_reward(f64::NAN, 0.0, 0.1).is_err());
        assert!(implicit_reward(0.0, f64::NEG_INFINITY, 0.1).is_err());
        assert!(implicit_reward(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn dpo_examples() {
        let zero = dpo_loss(0.3, 0.3);
        assert!((zero.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(zero.d_loss_d_reward, vec![-0.5, 0.5]);
        assert!((dpo_loss(1.0, 0.0).loss - 0.313_261_687_518_222_8).abs() < 1e-15);
        // saturated margins stay finite
        assert!(dpo_loss(-800.0, 800.0).loss.is_finite());
        assert!(dpo_loss(800.0, -800.0).loss >= 0.0);
    }

    #[test]
    fn nca_weight_examples() {
        assert_eq!(nca_weights(&[0.7, 0.7], 1.0).unwrap(), vec![0.5, 0.5]);
        let w = nca_weights(&[1.0, 0.0], 1.0).unwrap();
        assert!((w[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((w[1] - 0.268_941_421_369_995_1).abs() < 1e-15);
        let w = nca_weights(&[5.0, 0.0, 0.0], 0.01).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9 && w[1] < 1e-9 && w[2] < 1e-9);
        assert!(nca_weights(&[], 1.0).is_err());
        assert!(nca_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn nca_loss_examples() {
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!((nca_loss(&[0.0], 1.0).unwrap().loss - two_ln2).abs() < 1e-15);
        assert!((nca_loss(&[0.0, 0.0], 1.0).unwrap().loss - two_ln2).abs() < 1e-15);
        let saturated = nca_loss(&[50.0, 50.0, 50.0], 1.0).unwrap();
        // only the uniformly weighted negative terms remain: 3 · (1/3) · 50
        assert!((saturated.loss - 50.0).abs() < 1e-9);
        assert!(nca_loss(&[], 1.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for &(rw, rl) in &[(0.3, -0.2), (2.0, 1.5), (-3.0, 4.0), (0.0, 0.0)] {
            let out = dpo_loss(rw, rl);
            let fd = central_diff(|x| dpo_loss(x[0], x[1]).loss, &[rw, rl], h);
            for (a, n) in out.d_loss_d_reward.iter().zip(&fd) {
                assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-5);
            }
        }
        let rewards = [0.4, -1.2, 2.5];
        for &alpha in &[0.1, 1.0, 3.0] {
            let out = nca_loss(&rewards, alpha).unwrap();
            let fd = central_diff(|x| nca_loss(x, alpha).unwrap().loss, &rewards, h);
            for (a, n) in out.d_loss_d_reward.iter().zip(&fd) {
                assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-5, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn nca_positive_term_reduces_to_pairwise_form() {
        let (r1, r2) = (1.3, 0.3);
        let w = nca_weights(&[r1, r2], 1e-3).unwrap();
        let positive = -w[0] * log_logistic(r1);
        assert!((positive + log_logistic(r1)).abs() < 1e-6);
    }

    #[test]
    fn pair_invariants() {
        let p = PreferencePair::new(1, 0, (0, 10), (1, 7)).unwrap();
        assert_eq!(p.pair_length(), 17);
        assert_eq!(p.winner.role_sign.value(), 1.0);
        assert_eq!(p.loser.role_sign.value(), -1.0);
        assert!(PreferencePair::new(1, 0, (2, 10), (2, 7)).is_err());
        assert!(PreferencePair::new(1, 0, (0, 0), (1, 7)).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dpo_strictly_decreasing(margin in -20.0f64..20.0, delta in 1e-3f64..5.0) {
                prop_assert!(dpo_loss(margin + delta, 0.0).loss < dpo_loss(margin, 0.0).loss);
            }

            #[test]
            fn weights_sum_to_one_and_shift_invariant(
                rewards in proptest::collection::vec(-30.0f64..30.0, 1..12),
                alpha in 0.05f64..5.0,
                shift in -50.0f64..50.0,
            ) {
                let w = nca_weights(&rewards, alpha).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                // far-below-max rewards may underflow to exactly zero
                prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
                let top = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(rewards.iter().zip(&w).filter(|(r, _)| **r == top).all(|(_, x)| *x > 0.0));
                let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
                let ws = nca_weights(&shifted, alpha).unwrap();
                for (a, b) in w.iter().zip(&ws) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }

            #[test]
            fn losses_nonnegative(rewards in proptest::collection::vec(-60.0f64..60.0, 1..8), alpha in 0.01f64..10.0) {
                let out = nca_loss(&rewards, alpha).unwrap();
                prop_assert!(out.loss >= 0.0);
                prop_assert_eq!(out.d_loss_d_reward.len(), rewards.len());
                prop_assert!(dpo_loss(rewards[0], -rewards[0]).loss >= 0.0);
            }
        }
    }
}
