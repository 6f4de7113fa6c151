//! Top-k exact-match accuracy and per-example BLEU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::TokenId;

/// True iff one of the first `k` predictions equals `truth` token for token.
pub fn top_k_hit(predictions: &[Vec<TokenId>], truth: &[TokenId], k: usize) -> bool {
    predictions.iter().take(k).any(|p| p.as_slice() == truth)
}

/// 1-based rank of the first exact match, if any.
pub fn hit_rank(predictions: &[Vec<TokenId>], truth: &[TokenId]) -> Option<usize> {
    predictions.iter().position(|p| p.as_slice() == truth).map(|i| i + 1)
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// BLEU-k of an equal-length candidate against one reference, on a 0-100
/// scale: geometric mean of clipped n-gram precisions for
/// `n = 1..=min(4, len)`, brevity penalty 1, no smoothing.
pub fn bleu_k(candidate: &[TokenId], reference: &[TokenId]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::InvalidInput("BLEU needs nonempty spans".into()));
    }
    if candidate.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "candidate length {} differs from reference length {}",
            candidate.len(),
            reference.len()
        )));
    }
    let max_n = candidate.len().min(4);
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let matched: usize = cand
            .iter()
            .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return Ok(0.0);
        }
        let total = candidate.len() + 1 - n;
        log_sum += (matched as f64 / total as f64).ln();
    }
    Ok(100.0 * (log_sum / max_n as f64).exp())
}

/// One method's result on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: usize,
    pub method: String,
    pub truth: Vec<TokenId>,
    pub predictions: Vec<Vec<TokenId>>,
    pub hit_rank: Option<usize>,
    pub bleu: f64,
}

impl EvalRecord {
    /// Scores ranked predictions against the truth span; BLEU uses the top
    /// prediction.
    pub fn new(
        task_id: usize,
        method: impl Into<String>,
        truth: Vec<TokenId>,
        predictions: Vec<Vec<TokenId>>,
    ) -> Result<Self> {
        let bleu = match predictions.first() {
            Some(top) => bleu_k(top, &truth)?,
            None => 0.0,
        };
        Ok(Self {
            task_id,
            method: method.into(),
            hit_rank: hit_rank(&predictions, &truth),
            truth,
            predictions,
            bleu,
        })
    }

    pub fn hit_at(&self, k: usize) -> bool {
        self.hit_rank.is_some_and(|r| r <= k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_k_thresholds() {
        let preds = vec![vec![0, 1], vec![1, 1], vec![2, 2], vec![0, 0]];
        assert!(top_k_hit(&preds, &[0, 1], 1));
        assert!(!top_k_hit(&preds, &[3, 3], 4));
        assert!(top_k_hit(&preds, &[2, 2], 5));
        assert!(!top_k_hit(&preds, &[2, 2], 2));
        assert_eq!(hit_rank(&preds, &[2, 2]), Some(3));
    }

    #[test]
    fn bleu_boundaries() {
        assert_eq!(bleu_k(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(bleu_k(&[4, 5, 6], &[1, 2, 3]).unwrap(), 0.0);
        // p1 = 2/3, p2 = 1/2, p3 = 0
        assert_eq!(bleu_k(&[1, 2, 3], &[1, 2, 4]).unwrap(), 0.0);
    }

    #[test]
    fn bleu_two_token_partial() {
        // p1 = 1/2, p2 = 0
        assert_eq!(bleu_k(&[1, 9], &[1, 2]).unwrap(), 0.0);
        // p1 = 1, p2 = 0 on a swapped pair
        assert_eq!(bleu_k(&[2, 1], &[1, 2]).unwrap(), 0.0);
        // length 4: p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0
        assert_eq!(bleu_k(&[1, 2, 3, 9], &[1, 2, 3, 4]).unwrap(), 0.0);
        // length 5: (4/5 * 3/4 * 2/3 * 1/2)^(1/4)
        let got = bleu_k(&[1, 2, 3, 4, 9], &[1, 2, 3, 4, 5]).unwrap();
        let expect = 100.0 * (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn bleu_clips_repeated_tokens() {
        // unigram: candidate has four 7s, reference one 7 -> 1/4; bigram 0
        assert_eq!(bleu_k(&[7, 7, 7, 7, 7], &[7, 1, 2, 3, 4]).unwrap(), 0.0);
        // single token
        assert_eq!(bleu_k(&[3], &[3]).unwrap(), 100.0);
    }

    #[test]
    fn bleu_rejects_bad_spans() {
        assert!(bleu_k(&[], &[]).is_err());
        assert!(bleu_k(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn record_uses_top_prediction() {
        let r = EvalRecord::new(0, "m", vec![1, 2], vec![vec![0, 2], vec![1, 2]]).unwrap();
        assert_eq!(r.hit_rank, Some(2));
        assert!(!r.hit_at(1));
        assert!(r.hit_at(2));
        assert_eq!(r.bleu, 0.0);
    }

    proptest! {
        #[test]
        fn top_k_monotone_in_k(
            preds in proptest::collection::vec(proptest::collection::vec(0u32..3, 2), 0..8),
            truth in proptest::collection::vec(0u32..3, 2),
        ) {
            let mut prev = false;
            for k in 1..10 {
                let hit = top_k_hit(&preds, &truth, k);
                prop_assert!(hit || !prev);
                prev = hit;
            }
        }

        #[test]
        fn breaking_a_match_never_raises_bleu(
            reference in proptest::collection::vec(0u32..6, 1..8),
            flips in proptest::collection::vec(any::<bool>(), 8),
            which in 0usize..8,
        ) {
            let mut cand: Vec<u32> = reference.iter().zip(&flips).map(|(&t, &f)| if f { t } else { 100 + t }).collect();
            let i = which % reference.len();
            if cand[i] == reference[i] {
                let before = bleu_k(&cand, &reference).unwrap();
                cand[i] = 1000;
                let after = bleu_k(&cand, &reference).unwrap();
                prop_assert!(after <= before + 1e-12);
                prop_assert!((0.0..=100.0).contains(&after));
            }
        }
    }
}
