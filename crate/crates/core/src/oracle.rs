//! Brute-force ground truth over explicit joints.

use serde::{Deserialize, Serialize};

use crate::backend::{ConditionalBackend, ExactMarginalModel, JointTable};
use crate::dist::logsumexp;
use crate::error::{Error, Result};
use crate::scoring::{scoring_query, ScoringMode};
use crate::search::{all_spans, rank_order, score_completion, OrderPolicy};
use crate::seq::{GapTask, Hypothesis, TokenId};

/// Largest number of completions [`enumerate_gap`] will enumerate.
pub const MAX_COMPLETIONS: u128 = 1_000_000;

/// Every completion of `task`'s gap with its exact `log p(span | context)`,
/// best first.
pub fn enumerate_gap(joint: &JointTable, task: &GapTask) -> Result<Vec<(Vec<TokenId>, f64)>> {
    if task.len() != joint.len() {
        return Err(Error::InvalidQuery(format!(
            "task length {} does not match joint length {}",
            task.len(),
            joint.len()
        )));
    }
    let count = (joint.alphabet() as u128).saturating_pow(task.gap_len() as u32);
    if count > MAX_COMPLETIONS {
        return Err(Error::TooLarge(count));
    }
    let content: Vec<TokenId> = (0..joint.alphabet() as TokenId).collect();
    let spans = all_spans(&content, task.gap_len());
    let joint_lp = spans
        .iter()
        .map(|s| joint.log_prob(&task.complete(s)))
        .collect::<Result<Vec<f64>>>()?;
    let z = logsumexp(&joint_lp);
    let mut out: Vec<(Vec<TokenId>, f64)> = spans.into_iter().zip(joint_lp.into_iter().map(|lp| lp - z)).collect();
    out.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
    Ok(out)
}

/// Absolute residual of the telescoping identity
/// `log p(x) - log p(y) = sum_i [log p(x_i | x_{:i}, y_{i+1:}) - log p(y_i | x_{:i}, y_{i+1:})]`
/// with exact full-context conditionals.
pub fn hcb_identity_check(joint: &JointTable, x: &[TokenId], y: &[TokenId]) -> Result<f64> {
    if x.len() != joint.len() || y.len() != joint.len() {
        return Err(Error::InvalidInput("x and y must have the joint's length".into()));
    }
    let lhs = joint.log_prob(x)? - joint.log_prob(y)?;
    let mut rhs = 0.0;
    let mut mixed = y.to_vec();
    for i in 0..joint.len() {
        // mixed = (x_{:i}, ?, y_{i+1:})
        let cond = joint.full_conditional(&mixed, i)?;
        rhs += cond[x[i] as usize] - cond[y[i] as usize];
        mixed[i] = x[i];
    }
    Ok((lhs - rhs).abs())
}

/// Violation of conditional independence from masks, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CiResidual {
    /// Mean over queries of the mean absolute log-probability difference
    /// over content tokens.
    pub mean_abs: f64,
    /// Largest absolute log-probability difference seen.
    pub max_abs: f64,
    /// Mean over queries of `KL(reference || backend)` over content tokens.
    pub mean_kl: f64,
    pub max_kl: f64,
    pub queries: usize,
}

/// Residual diagnostics for one backend.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualReport {
    pub ci: CiResidual,
    pub pivot_spread: f64,
}

/// Compares the backend's mask-realization conditional at every gap position
/// (earlier gap positions filled from `fill`, later ones masked) with the
/// reference's marginal conditional given only the unmasked context. Both
/// are restricted to content tokens and renormalized.
pub fn ci_residual<B: ConditionalBackend + ?Sized>(
    backend: &B,
    reference: &ExactMarginalModel,
    tasks: &[(GapTask, Vec<TokenId>)],
) -> Result<CiResidual> {
    let vocab = backend.vocab();
    if vocab.content_ids() != reference.vocab().content_ids() {
        return Err(Error::InvalidInput("backend and reference vocabularies differ".into()));
    }
    let content = vocab.content_ids();
    let mut report = CiResidual::default();
    let (mut sum_abs, mut sum_kl) = (0.0, 0.0);
    for (task, fill) in tasks {
        if fill.len() != task.gap_len() {
            return Err(Error::InvalidInput("fill length must equal gap length".into()));
        }
        let mut hyp = Hypothesis::empty();
        for (offset, i) in task.gap().enumerate() {
            let q = scoring_query(vocab, task, &hyp, i, &ScoringMode::Standard)?;
            let got = backend.conditionals(&q.context, i)?.restricted(content);
            let want = reference.content_conditional(&q.context, i)?;
            let diffs: Vec<f64> = got.iter().zip(&want).map(|(g, w)| (g - w).abs()).collect();
            let kl: f64 = want
                .iter()
                .zip(&got)
                .map(|(w, g)| w.exp() * (w - g))
                .sum::<f64>()
                .max(0.0);
            sum_abs += diffs.iter().sum::<f64>() / diffs.len() as f64;
            sum_kl += kl;
            report.max_abs = diffs.iter().copied().fold(report.max_abs, f64::max);
            report.max_kl = report.max_kl.max(kl);
            report.queries += 1;
            hyp = hyp.extend(i, fill[offset], 0.0);
        }
    }
    if report.queries > 0 {
        report.mean_abs = sum_abs / report.queries as f64;
        report.mean_kl = sum_kl / report.queries as f64;
    }
    Ok(report)
}

/// HCB-pivot cumulative scores of every completion under each pivot,
/// `scores[pivot][completion]`.
pub fn pivot_scores<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    pivots: &[Vec<TokenId>],
    completions: &[Vec<TokenId>],
    order: OrderPolicy,
) -> Result<Vec<Vec<f64>>> {
    pivots
        .iter()
        .map(|pivot| {
            let mode = ScoringMode::pivot(pivot.clone());
            completions
                .iter()
                .map(|c| score_completion(backend, task, c, &mode, order).map(|h| h.score()))
                .collect()
        })
        .collect()
}

/// Largest disagreement between pivots on any completion's score, after
/// centering each pivot's scores on their mean. Zero means every pivot
/// assigns the same relative scores.
pub fn pivot_spread<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    pivots: &[Vec<TokenId>],
    completions: &[Vec<TokenId>],
) -> Result<f64> {
    if pivots.is_empty() || completions.is_empty() {
        return Ok(0.0);
    }
    let mut scores = pivot_scores(backend, task, pivots, completions, OrderPolicy::LeftToRight)?;
    for row in &mut scores {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        row.iter_mut().for_each(|s| *s -= mean);
    }
    Ok((0..completions.len())
        .map(|c| {
            let col = scores.iter().map(|row| row[c]);
            let hi = col.clone().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max))
}
