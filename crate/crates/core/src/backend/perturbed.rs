use crate::backend::{ConditionalBackend, ExactMarginalModel};
use crate::dist::CondDistribution;
use crate::error::{Error, Result};
use crate::rng::signed_unit;
use crate::seq::{TokenId, Vocab};

/// An exact model whose answers are distorted whenever the context contains
/// a mask token, breaking conditional independence from masks.
///
/// Mask-free contexts are answered by the base model unchanged. Otherwise
/// every entry (mask included) is shifted by `strength * g(v, context)` with
/// a seeded hash `g` in `[-1, 1]`, then renormalized.
#[derive(Debug, Clone)]
pub struct PerturbedModel {
    base: ExactMarginalModel,
    strength: f64,
    seed: u64,
    name: String,
}

impl PerturbedModel {
    pub fn new(base: ExactMarginalModel, strength: f64, seed: u64) -> Result<Self> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(Error::Config(format!("strength must be nonnegative, got {strength}")));
        }
        let name = format!("perturbed({}, delta={strength}, seed={seed})", base.name());
        Ok(Self {
            base,
            strength,
            seed,
            name,
        })
    }

    pub fn base(&self) -> &ExactMarginalModel {
        &self.base
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// The hash offset `g(token, context)` applied at `position`.
    pub fn offset(&self, token: TokenId, context: &[TokenId], position: usize) -> f64 {
        let words = [self.seed, position as u64, token as u64]
            .into_iter()
            .chain(context.iter().map(|&t| t as u64));
        signed_unit(words)
    }
}

impl ConditionalBackend for PerturbedModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        self.base.vocab()
    }

    fn expected_len(&self) -> Option<usize> {
        self.base.expected_len()
    }

    fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
        let base = self.base.conditionals(context, position)?;
        let mask = self.vocab().mask_id();
        if self.strength == 0.0 || !context.contains(&mask) {
            return Ok(base);
        }
        let shifted: Vec<f64> = base
            .logp()
            .iter()
            .enumerate()
            .map(|(v, lp)| lp + self.strength * self.offset(v as TokenId, context, position))
            .collect();
        CondDistribution::normalize(&shifted)
    }
}
