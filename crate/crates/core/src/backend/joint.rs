use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::logsumexp;
use crate::error::{Error, Result};
use crate::seq::TokenId;

/// Largest table accepted, in entries.
const MAX_ENTRIES: u128 = 1 << 24;

/// Explicit full-support joint distribution over `A^n` sequences of content
/// tokens `0..A`. Position 0 is the most significant digit of the flat index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    alphabet: usize,
    len: usize,
    logp: Vec<f64>,
}

impl JointTable {
    /// Builds a table from unnormalized log-weights.
    pub fn from_log_weights(alphabet: usize, len: usize, weights: Vec<f64>) -> Result<Self> {
        let size = table_size(alphabet, len)?;
        if weights.len() != size {
            return Err(Error::InvalidInput(format!(
                "expected {size} weights for A={alphabet}, n={len}, got {}",
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "weight {i} is not finite; the joint needs full support"
            )));
        }
        let lse = logsumexp(&weights);
        Ok(Self {
            alphabet,
            len,
            logp: weights.into_iter().map(|w| w - lse).collect(),
        })
    }

    pub fn uniform(alphabet: usize, len: usize) -> Result<Self> {
        let size = table_size(alphabet, len)?;
        Self::from_log_weights(alphabet, len, vec![0.0; size])
    }

    /// Log-normal random weights with log-scale `spread`; larger spreads give
    /// more peaked joints.
    pub fn random<R: Rng + ?Sized>(alphabet: usize, len: usize, spread: f64, rng: &mut R) -> Result<Self> {
        let size = table_size(alphabet, len)?;
        let weights = (0..size)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                spread * z
            })
            .collect();
        Self::from_log_weights(alphabet, len, weights)
    }

    /// Mass concentrated on `seq`: every other sequence has log-weight
    /// `-log_ratio` relative to it.
    pub fn peaked(alphabet: usize, seq: &[TokenId], log_ratio: f64) -> Result<Self> {
        let len = seq.len();
        let size = table_size(alphabet, len)?;
        let mut weights = vec![-log_ratio; size];
        let table = Self {
            alphabet,
            len,
            logp: Vec::new(),
        };
        weights[table.index(seq)?] = 0.0;
        Self::from_log_weights(alphabet, len, weights)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_entries(&self) -> usize {
        self.logp.len()
    }

    pub fn log_table(&self) -> &[f64] {
        &self.logp
    }

    pub fn index(&self, seq: &[TokenId]) -> Result<usize> {
        if seq.len() != self.len {
            return Err(Error::InvalidQuery(format!(
                "sequence length {} does not match joint length {}",
                seq.len(),
                self.len
            )));
        }
        seq.iter().try_fold(0usize, |acc, &t| {
            if (t as usize) < self.alphabet {
                Ok(acc * self.alphabet + t as usize)
            } else {
                Err(Error::InvalidToken {
                    token: t,
                    vocab_size: self.alphabet,
                })
            }
        })
    }

    pub fn sequence(&self, mut index: usize) -> Vec<TokenId> {
        let mut out = vec![0; self.len];
        for slot in out.iter_mut().rev() {
            *slot = (index % self.alphabet) as TokenId;
            index /= self.alphabet;
        }
        out
    }

    pub fn log_prob(&self, seq: &[TokenId]) -> Result<f64> {
        Ok(self.logp[self.index(seq)?])
    }

    fn stride(&self, position: usize) -> usize {
        self.alphabet.pow((self.len - 1 - position) as u32)
    }

    /// Log-probabilities of every index matching `pattern`, where `None`
    /// positions are summed out. Entries are grouped by the token at
    /// `split`, if given.
    fn collect_matching(&self, pattern: &[Option<TokenId>], split: Option<usize>) -> Result<Vec<Vec<f64>>> {
        if pattern.len() != self.len {
            return Err(Error::InvalidQuery(format!(
                "pattern length {} does not match joint length {}",
                pattern.len(),
                self.len
            )));
        }
        let mut base = 0usize;
        let mut free = Vec::new();
        for (i, slot) in pattern.iter().enumerate() {
            if Some(i) == split {
                continue;
            }
            match *slot {
                Some(t) if (t as usize) < self.alphabet => base += t as usize * self.stride(i),
                Some(t) => {
                    return Err(Error::InvalidToken {
                        token: t,
                        vocab_size: self.alphabet,
                    })
                }
                None => free.push(self.stride(i)),
            }
        }
        let groups = if split.is_some() { self.alphabet } else { 1 };
        let per_group = self.alphabet.pow(free.len() as u32);
        let mut out = vec![Vec::with_capacity(per_group); groups];
        let mut digits = vec![0usize; free.len()];
        let mut offset = 0usize;
        loop {
            match split {
                Some(q) => {
                    let s = self.stride(q);
                    for (v, bucket) in out.iter_mut().enumerate() {
                        bucket.push(self.logp[base + offset + v * s]);
                    }
                }
                None => out[0].push(self.logp[base + offset]),
            }
            // odometer over the free positions
            let mut k = 0;
            loop {
                if k == free.len() {
                    return Ok(out);
                }
                digits[k] += 1;
                offset += free[k];
                if digits[k] < self.alphabet {
                    break;
                }
                offset -= free[k] * self.alphabet;
                digits[k] = 0;
                k += 1;
            }
        }
    }

    /// `log p(x_position = v | observed)` for every content token `v`, where
    /// `pattern` gives the observed positions and `None` positions are
    /// marginalized. The entry at `position` itself is ignored.
    pub fn marginal_conditional(&self, pattern: &[Option<TokenId>], position: usize) -> Result<Vec<f64>> {
        if position >= self.len {
            return Err(Error::InvalidQuery(format!(
                "position {position} out of range for length {}",
                self.len
            )));
        }
        let groups = self.collect_matching(pattern, Some(position))?;
        let totals: Vec<f64> = groups.iter().map(|g| logsumexp(g)).collect();
        let lse = logsumexp(&totals);
        Ok(totals.into_iter().map(|t| t - lse).collect())
    }

    /// Marginal log-probability of the observed entries of `pattern`.
    pub fn marginal_log_prob(&self, pattern: &[Option<TokenId>]) -> Result<f64> {
        let groups = self.collect_matching(pattern, None)?;
        Ok(logsumexp(&groups[0]))
    }

    /// Full-context conditional `log p(x_i = v | x_{-i})` for every `v`.
    pub fn full_conditional(&self, seq: &[TokenId], position: usize) -> Result<Vec<f64>> {
        let pattern: Vec<Option<TokenId>> = seq.iter().map(|&t| Some(t)).collect();
        self.marginal_conditional(&pattern, position)
    }

    /// Draws `count` sequences by inverse-CDF sampling.
    pub fn sample_corpus<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<TokenId>> {
        let mut cdf = Vec::with_capacity(self.logp.len());
        let mut acc = 0.0;
        for lp in &self.logp {
            acc += lp.exp();
            cdf.push(acc);
        }
        (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                self.sequence(idx)
            })
            .collect()
    }
}

fn table_size(alphabet: usize, len: usize) -> Result<usize> {
    if alphabet < 1 || len < 1 {
        return Err(Error::InvalidInput(format!(
            "joint needs A >= 1 and n >= 1, got A={alphabet}, n={len}"
        )));
    }
    let size = (alphabet as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if size > MAX_ENTRIES {
        return Err(Error::TooLarge(size));
    }
    Ok(size as usize)
}
