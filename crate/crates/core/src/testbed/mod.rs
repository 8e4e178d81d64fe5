//! Synthetic, fully differentiable alignment environment.
//!
//! A log-linear policy over fixed candidate sets stands in for a language
//! model so that partition functions, implicit rewards and gradients are all
//! exact. The corpus is generated from a hidden preference direction with
//! controllable label noise, then trained with the interval loop in
//! [`trainer`].

pub mod dataset;
pub mod policy;
pub mod trainer;

pub use dataset::{generate_synthetic_dataset, AnnotatorBins, NoiseProfile, PairTruth, SyntheticDataset, SyntheticDatasetSpec};
pub use policy::{CandidateFeatures, ReferencePolicy, ToyPolicy};
pub use trainer::{
    batch_loss_and_grad, evaluate_preference_accuracy, pair_rewards, train, BatchGradient, StepRecord, Strategy,
    TrainerConfig, TrainingLog, TrainingOutcome,
};
