//! Text infilling with masked language models.
//!
//! The crate provides the shared data layer ([`seq`], [`dist`]), a
//! conditional-distribution contract with exact, empirical, perturbed and
//! remote implementations ([`backend`]), the three per-step scoring
//! functions ([`scoring`]), infilling and autoregressive beam search
//! ([`search`]), sampling baselines ([`sampling`]), brute-force ground truth
//! ([`oracle`]) and evaluation metrics ([`metrics`]).
//!
//! Everything is computed in the log domain over integer token ids.

pub mod backend;
pub mod dist;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod scoring;
pub mod search;
pub mod seq;

pub use backend::{ConditionalBackend, CountingBackend, JointTable};
pub use dist::CondDistribution;
pub use error::{Error, Result};
pub use scoring::ScoringMode;
pub use search::{BeamConfig, OrderPolicy};
pub use seq::{GapTask, Hypothesis, TokenId, Vocab};
