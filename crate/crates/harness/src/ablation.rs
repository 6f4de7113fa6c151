//! Wrappers that replace the mask log-probability read by mask-corrected
//! scoring. Conditionals themselves pass through untouched, so standard
//! scoring is unaffected.

use std::sync::Mutex;

use hcb_core::backend::{ConditionalBackend, Query};
use hcb_core::rng::{hash_words, rng_for};
use hcb_core::{CondDistribution, Result, TokenId, Vocab};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ring buffer of recent mask log-probabilities.
#[derive(Debug, Clone, Default)]
pub struct MaskProbBuffer {
    values: Vec<f64>,
    cursor: usize,
}

impl MaskProbBuffer {
    pub const CAPACITY: usize = 1000;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        if self.values.len() < Self::CAPACITY {
            self.values.push(value);
        } else {
            self.values[self.cursor] = value;
        }
        self.cursor = (self.cursor + 1) % Self::CAPACITY;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the slot the next push overwrites.
    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

macro_rules! forward_conditionals {
    () => {
        fn name(&self) -> &str {
            &self.name
        }
        fn vocab(&self) -> &Vocab {
            self.inner.vocab()
        }
        fn expected_len(&self) -> Option<usize> {
            self.inner.expected_len()
        }
        fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
            self.inner.conditionals(context, position)
        }
        fn conditionals_batch(&self, queries: &[Query]) -> Result<Vec<CondDistribution>> {
            self.inner.conditionals_batch(queries)
        }
    };
}

/// Context scramble: each mask log-prob read pushes the true value into a
/// [`MaskProbBuffer`] and returns a uniformly chosen buffered value.
pub struct ContextScramble<B> {
    inner: B,
    name: String,
    state: Mutex<(MaskProbBuffer, ChaCha8Rng)>,
}

pub fn ablation1_wrap<B: ConditionalBackend>(backend: B, seed: u64) -> ContextScramble<B> {
    let name = format!("{}+context-scramble", backend.name());
    ContextScramble {
        inner: backend,
        name,
        state: Mutex::new((MaskProbBuffer::new(), rng_for(&[seed, 0x6162_6c31]))),
    }
}

impl<B> ContextScramble<B> {
    pub fn buffer(&self) -> MaskProbBuffer {
        self.state.lock().expect("buffer lock").0.clone()
    }
}

impl<B: ConditionalBackend> ConditionalBackend for ContextScramble<B> {
    forward_conditionals!();

    fn mask_correction(&self, dist: &CondDistribution, context: &[TokenId], position: usize) -> Result<f64> {
        let truth = self.inner.mask_correction(dist, context, position)?;
        let mut state = self.state.lock().expect("buffer lock");
        let (buffer, rng) = &mut *state;
        buffer.push(truth);
        let i = rng.random_range(0..buffer.len());
        Ok(buffer.values()[i])
    }
}

/// Token swap: the correction reads `log p(y | context)` for a content
/// token `y` drawn from a hash of the seed and the query.
pub struct TokenSwap<B> {
    inner: B,
    name: String,
    seed: u64,
    forced: Option<TokenId>,
}

pub fn ablation2_wrap<B: ConditionalBackend>(backend: B, seed: u64) -> TokenSwap<B> {
    let name = format!("{}+token-swap", backend.name());
    TokenSwap {
        inner: backend,
        name,
        seed,
        forced: None,
    }
}

impl<B: ConditionalBackend> TokenSwap<B> {
    /// Always swaps in `token`.
    pub fn forced(backend: B, token: TokenId) -> Self {
        let mut w = ablation2_wrap(backend, 0);
        w.forced = Some(token);
        w
    }

    /// The token substituted for the mask at this query.
    pub fn swap_token(&self, context: &[TokenId], position: usize) -> TokenId {
        if let Some(t) = self.forced {
            return t;
        }
        let content = self.inner.vocab().content_ids();
        let h = hash_words(
            [self.seed, position as u64]
                .into_iter()
                .chain(context.iter().map(|&t| t as u64)),
        );
        content[(h % content.len() as u64) as usize]
    }
}

impl<B: ConditionalBackend> ConditionalBackend for TokenSwap<B> {
    forward_conditionals!();

    fn mask_correction(&self, dist: &CondDistribution, context: &[TokenId], position: usize) -> Result<f64> {
        Ok(dist.get(self.swap_token(context, position)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hcb_core::backend::{ExactMarginalModel, JointTable};
    use hcb_core::scoring::{step_scores, ScoringMode};
    use hcb_core::{GapTask, Hypothesis};

    fn model() -> ExactMarginalModel {
        ExactMarginalModel::new(JointTable::random(2, 3, 1.0, &mut rng_for(&[5])).unwrap())
    }

    #[test]
    fn buffer_wraps_at_capacity() {
        let mut b = MaskProbBuffer::new();
        for i in 0..1005 {
            b.push(i as f64);
        }
        assert_eq!(b.len(), 1000);
        assert_eq!(b.cursor(), 5);
        assert_eq!(b.values()[0], 1000.0);
        assert_eq!(b.values()[5], 5.0);
    }

    #[test]
    fn cold_start_returns_truth() {
        let m = model();
        let w = ablation1_wrap(&m, 1);
        let ctx = [2, 0, 2];
        let d = m.conditionals(&ctx, 0).unwrap();
        assert_eq!(w.mask_correction(&d, &ctx, 0).unwrap(), d.get(2));
        assert_eq!(w.buffer().len(), 1);
    }

    #[test]
    fn constant_mask_mass_makes_scramble_a_no_op() {
        let m = model();
        let w = ablation1_wrap(&m, 1);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 1], 0, 3).unwrap();
        for pos in 0..3 {
            let a = step_scores(&m, &task, &Hypothesis::empty(), pos, &ScoringMode::HcbMask).unwrap();
            let b = step_scores(&w, &task, &Hypothesis::empty(), pos, &ScoringMode::HcbMask).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn swapping_in_the_chosen_token_zeroes_its_score() {
        let m = model();
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 1], 2, 3).unwrap();
        let d = m.conditionals(&[0, 1, 2], 2).unwrap();
        let top = m
            .vocab()
            .content_ids()
            .iter()
            .copied()
            .max_by(|&a, &b| d.get(a).total_cmp(&d.get(b)))
            .unwrap();
        let w = TokenSwap::forced(&m, top);
        let s = step_scores(&w, &task, &Hypothesis::empty(), 2, &ScoringMode::HcbMask).unwrap();
        assert_eq!(s[top as usize], 0.0);
    }

    #[test]
    fn swap_tokens_are_seeded_content_tokens() {
        let m = model();
        let a = ablation2_wrap(&m, 3);
        let b = ablation2_wrap(&m, 3);
        for pos in 0..3 {
            let ctx = [2, 2, 2];
            assert_eq!(a.swap_token(&ctx, pos), b.swap_token(&ctx, pos));
            assert!(a.swap_token(&ctx, pos) < 2);
        }
    }

    #[test]
    fn standard_scores_pass_through() {
        let m = model();
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 1], 0, 2).unwrap();
        let plain = step_scores(&m, &task, &Hypothesis::empty(), 0, &ScoringMode::Standard).unwrap();
        let s1 = step_scores(
            &ablation1_wrap(&m, 1),
            &task,
            &Hypothesis::empty(),
            0,
            &ScoringMode::Standard,
        )
        .unwrap();
        let s2 = step_scores(
            &ablation2_wrap(&m, 1),
            &task,
            &Hypothesis::empty(),
            0,
            &ScoringMode::Standard,
        )
        .unwrap();
        assert_eq!(plain, s1);
        assert_eq!(plain, s2);
    }
}
