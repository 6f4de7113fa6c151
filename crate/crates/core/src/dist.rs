//! Normalized log-probability vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::TokenId;

/// Tolerance on `logsumexp(logp)` accepted by [`CondDistribution::new`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Floor used in place of `-inf` so that every entry stays finite.
pub const LOG_FLOOR: f64 = -1e9;

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if xs[b] >= x => {}
            _ => best = Some(i),
        }
    }
    best
}

/// A normalized log-probability vector over the full vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondDistribution {
    logp: Vec<f64>,
}

impl CondDistribution {
    /// Wraps an already-normalized vector, checking finiteness and
    /// normalization.
    pub fn new(logp: Vec<f64>) -> Result<Self> {
        check_finite(&logp)?;
        let lse = logsumexp(&logp);
        if (lse).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("logsumexp is {lse:e}, expected 0")));
        }
        Ok(Self { logp })
    }

    /// Softmax-normalizes raw log-scores.
    pub fn normalize(scores: &[f64]) -> Result<Self> {
        check_finite(scores)?;
        if scores.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 entries, got {}",
                scores.len()
            )));
        }
        let lse = logsumexp(scores);
        Ok(Self {
            logp: scores.iter().map(|s| s - lse).collect(),
        })
    }

    /// Accepts a vector whose logsumexp deviates from zero by at most `tol`,
    /// shifting it back to exact normalization.
    pub fn renormalize_within(logp: Vec<f64>, tol: f64) -> Result<Self> {
        check_finite(&logp)?;
        let lse = logsumexp(&logp);
        if lse.abs() > tol {
            return Err(Error::InvalidDistribution(format!(
                "logsumexp is {lse:e}, beyond tolerance {tol:e}"
            )));
        }
        if lse.abs() <= NORMALIZATION_TOL {
            return Ok(Self { logp });
        }
        Ok(Self {
            logp: logp.into_iter().map(|x| x - lse).collect(),
        })
    }

    pub fn logp(&self) -> &[f64] {
        &self.logp
    }

    pub fn into_logp(self) -> Vec<f64> {
        self.logp
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    pub fn get(&self, token: TokenId) -> f64 {
        self.logp[token as usize]
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.logp).expect("distribution is nonempty")
    }

    /// Log-probabilities restricted to `tokens` and renormalized over them.
    pub fn restricted(&self, tokens: &[TokenId]) -> Vec<f64> {
        let sub: Vec<f64> = tokens.iter().map(|&t| self.get(t)).collect();
        let lse = logsumexp(&sub);
        sub.into_iter().map(|x| x - lse).collect()
    }
}

fn check_finite(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::InvalidDistribution(format!(
            "entry {i} is not finite ({})",
            xs[i]
        ))),
        None => Ok(()),
    }
}
