//! Stability-aware, policy-adaptive selection of preference pairs.
//!
//! The crate is organised bottom-up:
//!
//! - [`preference`]: pair data model, implicit reward, DPO and NCA losses with
//!   analytic reward derivatives.
//! - [`score`]: per-response confidence, gradient and curvature proxies and
//!   the length-normalised, damped utility score.
//! - [`curriculum`]: difficulty strata, the linear mixing schedule and
//!   disjoint refreshable pools.
//! - [`selection`]: ranking and hard top-γ truncation.
//! - [`testbed`]: a log-linear toy policy, a seeded synthetic preference
//!   corpus and the interval training loop.
//! - [`ingest`]: deduplication, boxed-answer consistency filtering, judge
//!   annotation parsing and stratum statistics.
//! - [`metrics`]: gradient-norm stability statistics and run manifests.

pub mod curriculum;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod preference;
pub mod score;
pub mod selection;
pub mod testbed;

pub use error::{Error, Result};

/// Identifier of a preference pair.
pub type PairId = u64;
