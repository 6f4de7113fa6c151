use std::collections::HashMap;

use rand::Rng;

use crate::backend::{check_query, ConditionalBackend, DEFAULT_MASK_MASS};
use crate::dist::CondDistribution;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::seq::{TokenId, Vocab};

pub const DEFAULT_SMOOTHING: f64 = 0.5;

type ContextKey = (Vec<TokenId>, usize);

/// Count-based estimate of the masked-training loss minimizer.
///
/// Contexts are keyed by the exact masked sequence plus the query position;
/// there is no generalization across contexts. Unseen contexts fall back to
/// the uniform distribution over content tokens.
#[derive(Debug, Clone)]
pub struct EmpiricalMaskedEstimator {
    vocab: Vocab,
    len: usize,
    counts: HashMap<ContextKey, Vec<u32>>,
    mask_rate: f64,
    smoothing: f64,
    num_samples: usize,
    log_mask: f64,
    log_content: f64,
    name: String,
}

/// Simulates `num_samples` masking draws over `corpus` (cycling through it)
/// and counts, for every masked position, the true token under the masked
/// context.
///
/// Each position is masked independently with probability `mask_rate`.
pub fn fit_empirical(
    corpus: &[Vec<TokenId>],
    alphabet: usize,
    mask_rate: f64,
    num_samples: usize,
    seed: u64,
) -> Result<EmpiricalMaskedEstimator> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::InvalidInput(format!(
            "mask rate must lie in (0, 1), got {mask_rate}"
        )));
    }
    let len = corpus[0].len();
    if len == 0 || corpus.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidInput(
            "corpus sequences must share one nonzero length".into(),
        ));
    }
    if let Some(&bad) = corpus.iter().flatten().find(|&&t| t as usize >= alphabet) {
        return Err(Error::InvalidToken {
            token: bad,
            vocab_size: alphabet,
        });
    }
    let vocab = Vocab::synthetic(alphabet);
    let mask = vocab.mask_id();
    let mut rng = rng_for(&[seed, 0x656d_7069]);
    let mut counts: HashMap<ContextKey, Vec<u32>> = HashMap::new();
    let mut masked = Vec::with_capacity(len);
    for s in 0..num_samples {
        let seq = &corpus[s % corpus.len()];
        masked.clear();
        masked.extend((0..len).filter(|_| rng.random::<f64>() < mask_rate));
        if masked.is_empty() {
            continue;
        }
        let mut y = seq.clone();
        for &p in &masked {
            y[p] = mask;
        }
        for &p in &masked {
            let row = counts.entry((y.clone(), p)).or_insert_with(|| vec![0; alphabet]);
            row[seq[p] as usize] += 1;
        }
    }
    Ok(EmpiricalMaskedEstimator {
        name: format!("empirical(A={alphabet}, n={len}, samples={num_samples})"),
        vocab,
        len,
        counts,
        mask_rate,
        smoothing: DEFAULT_SMOOTHING,
        num_samples,
        log_mask: DEFAULT_MASK_MASS.ln(),
        log_content: (-DEFAULT_MASK_MASS).ln_1p(),
    })
}

impl EmpiricalMaskedEstimator {
    pub fn with_smoothing(mut self, smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::Config(format!("smoothing must be positive, got {smoothing}")));
        }
        self.smoothing = smoothing;
        Ok(self)
    }

    pub fn mask_rate(&self) -> f64 {
        self.mask_rate
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Number of distinct (masked context, position) keys observed.
    pub fn num_contexts(&self) -> usize {
        self.counts.len()
    }

    /// Smoothed relative frequencies over content tokens, in log space.
    pub fn content_conditional(&self, context: &[TokenId], position: usize) -> Result<Vec<f64>> {
        check_query(&self.vocab, Some(self.len), context, position)?;
        let alphabet = self.vocab.content_ids().len();
        let mut key = context.to_vec();
        key[position] = self.vocab.mask_id();
        Ok(match self.counts.get(&(key, position)) {
            Some(row) => {
                let total: f64 = row.iter().map(|&c| c as f64).sum::<f64>() + self.smoothing * alphabet as f64;
                row.iter()
                    .map(|&c| ((c as f64 + self.smoothing) / total).ln())
                    .collect()
            }
            None => vec![-(alphabet as f64).ln(); alphabet],
        })
    }
}

impl ConditionalBackend for EmpiricalMaskedEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn expected_len(&self) -> Option<usize> {
        Some(self.len)
    }

    fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
        let mut logp: Vec<f64> = self
            .content_conditional(context, position)?
            .into_iter()
            .map(|c| c + self.log_content)
            .collect();
        logp.push(self.log_mask);
        CondDistribution::renormalize_within(logp, 1e-9)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::JointTable;

    #[test]
    fn zero_samples_fall_back_to_uniform() {
        let est = fit_empirical(&[vec![0, 1, 2]], 3, 0.15, 0, 1).unwrap();
        assert_eq!(est.num_contexts(), 0);
        let c = est.content_conditional(&[3, 1, 2], 0).unwrap();
        for x in c {
            assert!((x + 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_joint_concentrates() {
        let corpus = vec![vec![0, 0]];
        let mut last = f64::NEG_INFINITY;
        for samples in [100, 1_000, 10_000] {
            let est = fit_empirical(&corpus, 2, 0.5, samples, 7).unwrap();
            let lp0 = est.content_conditional(&[2, 0], 0).unwrap()[0];
            let lp1 = est.content_conditional(&[0, 2], 1).unwrap()[0];
            assert!(lp0 > last);
            last = lp0;
            assert!(lp1.exp() > 0.95);
        }
        assert!(last.exp() > 0.999);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_empirical(&[], 2, 0.1, 10, 0), Err(Error::InvalidInput(_))));
        assert!(fit_empirical(&[vec![0, 1]], 2, 0.0, 10, 0).is_err());
        assert!(fit_empirical(&[vec![0, 1], vec![0]], 2, 0.2, 10, 0).is_err());
        assert!(fit_empirical(&[vec![0, 4]], 2, 0.2, 10, 0).is_err());
    }

    #[test]
    fn estimates_are_full_support_distributions() {
        let joint = JointTable::random(3, 3, 1.0, &mut rng_for(&[1])).unwrap();
        let corpus = joint.sample_corpus(500, &mut rng_for(&[2]));
        let est = fit_empirical(&corpus, 3, 0.3, 2_000, 3).unwrap();
        for idx in 0..joint.num_entries() {
            let mut ctx = joint.sequence(idx);
            ctx[1] = 3;
            let d = est.conditionals(&ctx, 1).unwrap();
            assert!(d.logp().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn fitting_is_seeded() {
        let corpus = vec![vec![0, 1, 2], vec![2, 2, 1]];
        let a = fit_empirical(&corpus, 3, 0.3, 500, 9).unwrap();
        let b = fit_empirical(&corpus, 3, 0.3, 500, 9).unwrap();
        assert_eq!(a.counts, b.counts);
    }
}
