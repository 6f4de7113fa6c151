//! The conditional-distribution contract and its implementations.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dist::CondDistribution;
use crate::error::{Error, Result};
use crate::seq::{TokenId, Vocab};

mod empirical;
mod exact;
mod joint;
#[cfg(feature = "remote")]
pub mod loopback;
mod perturbed;
#[cfg(feature = "remote")]
mod remote;

pub use empirical::{fit_empirical, EmpiricalMaskedEstimator, DEFAULT_SMOOTHING};
pub use exact::{ExactMarginalModel, DEFAULT_MASK_MASS};
pub use joint::JointTable;
pub use perturbed::PerturbedModel;
#[cfg(feature = "remote")]
pub use remote::{RemoteBackend, RemoteMeta, NORMALIZATION_SLACK};

/// One conditional query: the distribution at `position` given `context`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub context: Vec<TokenId>,
    pub position: usize,
}

impl Query {
    pub fn new(context: Vec<TokenId>, position: usize) -> Self {
        Self { context, position }
    }
}

/// Source of single-position conditionals `p(. | context)` over the full
/// vocabulary, mask token included.
///
/// Implementations must be deterministic: the same query always yields the
/// same distribution.
pub trait ConditionalBackend: Send + Sync {
    fn name(&self) -> &str;

    fn vocab(&self) -> &Vocab;

    /// Sequence length the backend is defined over, if fixed.
    fn expected_len(&self) -> Option<usize> {
        None
    }

    fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution>;

    /// Order-preserving batch form of [`conditionals`](Self::conditionals).
    fn conditionals_batch(&self, queries: &[Query]) -> Result<Vec<CondDistribution>> {
        queries
            .iter()
            .map(|q| self.conditionals(&q.context, q.position))
            .collect()
    }

    /// The log-probability subtracted by mask-corrected scoring, read from a
    /// distribution this backend returned for `(context, position)`.
    fn mask_correction(&self, dist: &CondDistribution, _context: &[TokenId], _position: usize) -> Result<f64> {
        Ok(dist.get(self.vocab().mask_id()))
    }
}

macro_rules! forward_backend {
    ($($ty:ty),*) => {$(
        impl<B: ConditionalBackend + ?Sized> ConditionalBackend for $ty {
            fn name(&self) -> &str {
                (**self).name()
            }
            fn vocab(&self) -> &Vocab {
                (**self).vocab()
            }
            fn expected_len(&self) -> Option<usize> {
                (**self).expected_len()
            }
            fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
                (**self).conditionals(context, position)
            }
            fn conditionals_batch(&self, queries: &[Query]) -> Result<Vec<CondDistribution>> {
                (**self).conditionals_batch(queries)
            }
            fn mask_correction(
                &self,
                dist: &CondDistribution,
                context: &[TokenId],
                position: usize,
            ) -> Result<f64> {
                (**self).mask_correction(dist, context, position)
            }
        }
    )*};
}

forward_backend!(&B, Box<B>, Arc<B>);

/// Checks a query against a vocabulary and an optional fixed length.
pub(crate) fn check_query(
    vocab: &Vocab,
    expected_len: Option<usize>,
    context: &[TokenId],
    position: usize,
) -> Result<()> {
    if let Some(n) = expected_len {
        if context.len() != n {
            return Err(Error::InvalidQuery(format!(
                "context length {} does not match model length {n}",
                context.len()
            )));
        }
    }
    if position >= context.len() {
        return Err(Error::InvalidQuery(format!(
            "position {position} out of range for length {}",
            context.len()
        )));
    }
    context.iter().try_for_each(|&t| vocab.check(t))
}

/// Wraps a backend and counts every conditional query it answers.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicU64,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) -> u64 {
        self.calls.swap(0, Ordering::Relaxed)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ConditionalBackend> ConditionalBackend for CountingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn expected_len(&self) -> Option<usize> {
        self.inner.expected_len()
    }

    fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.conditionals(context, position)
    }

    fn conditionals_batch(&self, queries: &[Query]) -> Result<Vec<CondDistribution>> {
        self.calls.fetch_add(queries.len() as u64, Ordering::Relaxed);
        self.inner.conditionals_batch(queries)
    }

    fn mask_correction(&self, dist: &CondDistribution, context: &[TokenId], position: usize) -> Result<f64> {
        self.inner.mask_correction(dist, context, position)
    }
}
