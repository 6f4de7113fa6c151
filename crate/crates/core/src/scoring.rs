//! Per-step scoring functions for infilling beam search.
//!
//! * `Standard`: `log p(v | x_{:i}, [M]_{i:k}, x_{k:})`.
//! * `HcbMask`: the standard score minus `log p([M] | same context)`. Both
//!   terms come from the same backend call.
//! * `HcbPivot`: `log p(v | x_{:i}, y_{i:k}, x_{k:}) - log p(y_i | same)`,
//!   with the pivot `y` written into every unfilled gap position.
//!
//! Corrected scores are never renormalized; they rank completions up to an
//! additive constant.

use serde::{Deserialize, Serialize};

use crate::backend::{ConditionalBackend, Query};
use crate::dist::CondDistribution;
use crate::error::{Error, Result};
use crate::seq::{realize, realize_pivot, GapTask, Hypothesis, TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScoringMode {
    Standard,
    HcbMask,
    HcbPivot {
        pivot: Vec<TokenId>,
        /// Put a mask, not the pivot token, at the query position.
        #[serde(default)]
        query_holds_mask: bool,
    },
}

impl ScoringMode {
    pub fn pivot(pivot: Vec<TokenId>) -> Self {
        ScoringMode::HcbPivot {
            pivot,
            query_holds_mask: false,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScoringMode::Standard => "standard".into(),
            ScoringMode::HcbMask => "hcb".into(),
            ScoringMode::HcbPivot {
                pivot,
                query_holds_mask,
            } => {
                let ids: Vec<String> = pivot.iter().map(|t| t.to_string()).collect();
                let suffix = if *query_holds_mask { ",qmask" } else { "" };
                format!("hcb-pivot[{}{suffix}]", ids.join(" "))
            }
        }
    }

    pub fn validate(&self, vocab: &Vocab, task: &GapTask) -> Result<()> {
        if let ScoringMode::HcbPivot { pivot, .. } = self {
            if pivot.len() != task.gap_len() {
                return Err(Error::Config(format!(
                    "pivot length {} does not match gap length {}",
                    pivot.len(),
                    task.gap_len()
                )));
            }
            pivot.iter().try_for_each(|&t| vocab.check(t))?;
        }
        Ok(())
    }
}

/// The backend query whose answer yields the step scores at `position`.
pub fn scoring_query(
    vocab: &Vocab,
    task: &GapTask,
    hyp: &Hypothesis,
    position: usize,
    mode: &ScoringMode,
) -> Result<Query> {
    if !task.gap().contains(&position) || hyp.filled().contains_key(&position) {
        return Err(Error::InvalidQuery(format!(
            "position {position} is not an unfilled gap position"
        )));
    }
    let context = match mode {
        ScoringMode::Standard | ScoringMode::HcbMask => realize(vocab, task, hyp, vocab.mask_id())?,
        ScoringMode::HcbPivot {
            pivot,
            query_holds_mask,
        } => {
            let mut ctx = realize_pivot(vocab, task, hyp, pivot)?;
            if *query_holds_mask {
                ctx[position] = vocab.mask_id();
            }
            ctx
        }
    };
    Ok(Query::new(context, position))
}

/// Turns the backend's answer to [`scoring_query`] into step scores.
pub fn scores_from_dist<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    query: &Query,
    dist: &CondDistribution,
    mode: &ScoringMode,
) -> Result<Vec<f64>> {
    let correction = match mode {
        ScoringMode::Standard => return Ok(dist.logp().to_vec()),
        ScoringMode::HcbMask => backend.mask_correction(dist, &query.context, query.position)?,
        ScoringMode::HcbPivot { pivot, .. } => dist.get(pivot[query.position - task.start()]),
    };
    Ok(dist.logp().iter().map(|lp| lp - correction).collect())
}

/// Scores every vocabulary entry as the token filling `position` next.
/// Issues exactly one backend call.
pub fn step_scores<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    hyp: &Hypothesis,
    position: usize,
    mode: &ScoringMode,
) -> Result<Vec<f64>> {
    mode.validate(backend.vocab(), task)?;
    let query = scoring_query(backend.vocab(), task, hyp, position, mode)?;
    let dist = backend.conditionals(&query.context, query.position)?;
    scores_from_dist(backend, task, &query, &dist, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, ExactMarginalModel, JointTable, DEFAULT_MASK_MASS};
    use crate::dist::logsumexp;
    use crate::rng::rng_for;

    fn setup() -> (ExactMarginalModel, GapTask, Vec<TokenId>) {
        let joint = JointTable::random(3, 4, 1.5, &mut rng_for(&[31])).unwrap();
        let model = ExactMarginalModel::new(joint);
        let truth = vec![1, 2, 0, 2];
        let (task, _) = GapTask::mask_span(model.vocab(), &truth, 1, 3).unwrap();
        (model, task, truth)
    }

    #[test]
    fn hcb_mask_is_uniform_shift_under_constant_mask_mass() {
        let (m, task, _) = setup();
        let hyp = Hypothesis::empty();
        let std = step_scores(&m, &task, &hyp, 1, &ScoringMode::Standard).unwrap();
        let hcb = step_scores(&m, &task, &hyp, 1, &ScoringMode::HcbMask).unwrap();
        for (s, h) in std.iter().zip(&hcb) {
            assert!((h - (s - DEFAULT_MASK_MASS.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn pivot_token_scores_zero_at_last_position() {
        let (m, task, truth) = setup();
        let pivot = truth[1..3].to_vec();
        let hyp = Hypothesis::empty().extend(1, truth[1], 0.0);
        let s = step_scores(&m, &task, &hyp, 2, &ScoringMode::pivot(pivot.clone())).unwrap();
        assert_eq!(s[pivot[1] as usize], 0.0);
    }

    #[test]
    fn standard_matches_enumerated_marginal() {
        let (m, task, _) = setup();
        let joint = m.joint();
        let s = step_scores(&m, &task, &Hypothesis::empty(), 1, &ScoringMode::Standard).unwrap();
        // p(x_1 = v | x_0 = 1, x_3 = 2), summing x_2 out by enumeration
        let mass: Vec<f64> = (0..3)
            .map(|v| {
                logsumexp(
                    &(0..3)
                        .map(|u| joint.log_prob(&[1, v, u, 2]).unwrap())
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let z = logsumexp(&mass);
        for v in 0..3 {
            let expect = mass[v] - z + (-DEFAULT_MASK_MASS).ln_1p();
            assert!((s[v] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn pivot_mode_requires_matching_pivot() {
        let (m, task, _) = setup();
        let err = step_scores(&m, &task, &Hypothesis::empty(), 1, &ScoringMode::pivot(vec![0])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = step_scores(&m, &task, &Hypothesis::empty(), 1, &ScoringMode::pivot(vec![0, 9])).unwrap_err();
        assert!(matches!(err, Error::InvalidToken { .. }));
    }

    #[test]
    fn rejects_filled_or_outside_positions() {
        let (m, task, _) = setup();
        let hyp = Hypothesis::empty().extend(1, 0, 0.0);
        assert!(step_scores(&m, &task, &hyp, 1, &ScoringMode::Standard).is_err());
        assert!(step_scores(&m, &task, &hyp, 0, &ScoringMode::Standard).is_err());
    }

    #[test]
    fn hcb_mask_issues_no_extra_calls() {
        let (m, task, _) = setup();
        let counting = CountingBackend::new(m);
        let hyp = Hypothesis::empty();
        step_scores(&counting, &task, &hyp, 1, &ScoringMode::Standard).unwrap();
        let standard = counting.reset();
        step_scores(&counting, &task, &hyp, 1, &ScoringMode::HcbMask).unwrap();
        assert_eq!(counting.calls(), standard);
        assert_eq!(standard, 1);
    }

    #[test]
    fn pivot_realization_places_pivot_at_query() {
        let (m, task, _) = setup();
        let q = scoring_query(
            m.vocab(),
            &task,
            &Hypothesis::empty(),
            1,
            &ScoringMode::pivot(vec![2, 0]),
        )
        .unwrap();
        assert_eq!(q.context, vec![1, 2, 0, 2]);
        let mode = ScoringMode::HcbPivot {
            pivot: vec![2, 0],
            query_holds_mask: true,
        };
        let q = scoring_query(m.vocab(), &task, &Hypothesis::empty(), 1, &mode).unwrap();
        assert_eq!(q.context, vec![1, 3, 0, 2]);
    }
}
