//! Log-linear policy over explicit per-prompt candidate sets.
//!
//! `log π(y|x) = θ·φ(x,y) − log Σ_{y'} exp(θ·φ(x,y'))`, so the normaliser is
//! exact and `∂ log π / ∂θ = φ(y) − E_π[φ]`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major candidate features for every prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    dim: usize,
    prompts: Vec<Vec<f64>>,
}

impl CandidateFeatures {
    pub fn new(dim: usize, prompts: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("feature dimension must be positive"));
        }
        for (i, rows) in prompts.iter().enumerate() {
            if rows.is_empty() || rows.len() % dim != 0 {
                return Err(Error::domain(format!(
                    "prompt {i}: {} feature values do not form rows of width {dim}",
                    rows.len()
                )));
            }
        }
        Ok(Self { dim, prompts })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn num_candidates(&self, prompt_id: u32) -> Result<usize> {
        Ok(self.rows(prompt_id)?.len() / self.dim)
    }

    fn rows(&self, prompt_id: u32) -> Result<&[f64]> {
        self.prompts
            .get(prompt_id as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::domain(format!("unknown prompt {prompt_id}")))
    }

    pub fn feature(&self, prompt_id: u32, response_id: u32) -> Result<&[f64]> {
        let rows = self.rows(prompt_id)?;
        let start = response_id as usize * self.dim;
        rows.get(start..start + self.dim).ok_or_else(|| {
            Error::domain(format!("response {response_id} not in the candidate set of prompt {prompt_id}"))
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax distribution of a policy over one prompt's candidates.
#[derive(Debug, Clone)]
pub struct CandidateDistribution<'a> {
    features: &'a [f64],
    dim: usize,
    log_probs: Vec<f64>,
}

impl CandidateDistribution<'_> {
    pub fn log_prob(&self, response_id: u32) -> Result<f64> {
        self.log_probs
            .get(response_id as usize)
            .copied()
            .ok_or_else(|| Error::domain(format!("response {response_id} out of range")))
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// `E_π[φ]` over the candidate set.
    pub fn expected_feature(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (row, lp) in self.features.chunks_exact(self.dim).zip(&self.log_probs) {
            let p = lp.exp();
            for (m, f) in mean.iter_mut().zip(row) {
                *m += p * f;
            }
        }
        mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub theta: Vec<f64>,
    features: Arc<CandidateFeatures>,
}

impl ToyPolicy {
    pub fn new(theta: Vec<f64>, features: Arc<CandidateFeatures>) -> Result<Self> {
        if theta.len() != features.dim() {
            return Err(Error::domain(format!(
                "theta has {} entries, features have dimension {}",
                theta.len(),
                features.dim()
            )));
        }
        Ok(Self { theta, features })
    }

    pub fn zeros(features: Arc<CandidateFeatures>) -> Self {
        Self {
            theta: vec![0.0; features.dim()],
            features,
        }
    }

    pub fn features(&self) -> &Arc<CandidateFeatures> {
        &self.features
    }

    pub fn distribution(&self, prompt_id: u32) -> Result<CandidateDistribution<'_>> {
        let dim = self.features.dim();
        let features = self.features.rows(prompt_id)?;
        let logits: Vec<f64> = features.chunks_exact(dim).map(|row| dot(&self.theta, row)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(CandidateDistribution {
            features,
            dim,
            log_probs: logits.into_iter().map(|l| l - log_z).collect(),
        })
    }

    pub fn policy_logprob(&self, prompt_id: u32, response_id: u32) -> Result<f64> {
        self.distribution(prompt_id)?.log_prob(response_id)
    }

    /// `(log π(y|x), φ(y) − E_π[φ])`.
    pub fn logprob_and_grad(&self, prompt_id: u32, response_id: u32) -> Result<(f64, Vec<f64>)> {
        let dist = self.distribution(prompt_id)?;
        let lp = dist.log_prob(response_id)?;
        let phi = self.features.feature(prompt_id, response_id)?;
        let grad = phi.iter().zip(dist.expected_feature()).map(|(f, m)| f - m).collect();
        Ok((lp, grad))
    }
}

/// Frozen reference policy `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    inner: ToyPolicy,
}

impl ReferencePolicy {
    pub fn new(policy: ToyPolicy) -> Self {
        Self { inner: policy }
    }

    pub fn theta_ref(&self) -> &[f64] {
        &self.inner.theta
    }

    pub fn logprob(&self, prompt_id: u32, response_id: u32) -> Result<f64> {
        self.inner.policy_logprob(prompt_id, response_id)
    }

    /// A trainable copy starting at the reference parameters.
    pub fn to_policy(&self) -> ToyPolicy {
        self.inner.clone()
    }
}
