//! Accuracy as a function of the pivot sequence.

use hcb_core::search::{BeamConfig, OrderPolicy};
use hcb_core::{Error, Result, ScoringMode, TokenId, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::{BuiltBackend, ExperimentConfig, Method};
use crate::experiment::{run_with_backend, ExperimentResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotRow {
    pub pivot: Vec<TokenId>,
    pub method: String,
    pub top_k: Vec<(usize, f64)>,
    pub mean_bleu: f64,
    pub oracle_agreement: Option<f64>,
}

/// One constant pivot per content token, optionally followed by the
/// all-mask pivot.
pub fn constant_pivots(vocab: &Vocab, gap: usize, include_mask: bool) -> Vec<Vec<TokenId>> {
    let mut out: Vec<Vec<TokenId>> = vocab.content_ids().iter().map(|&t| vec![t; gap]).collect();
    if include_mask {
        out.push(vec![vocab.mask_id(); gap]);
    }
    out
}

/// Runs pivot-corrected beam search once per pivot over a shared task set
/// and returns per-pivot accuracy, best first (ties keep input order).
pub fn pivot_sweep(
    cfg: &ExperimentConfig,
    built: &BuiltBackend,
    pivots: &[Vec<TokenId>],
    beam_size: usize,
    order: OrderPolicy,
) -> Result<(Vec<PivotRow>, ExperimentResult)> {
    if pivots.is_empty() {
        return Err(Error::Config("no pivots to sweep".into()));
    }
    let mut cfg = cfg.clone();
    cfg.methods = pivots
        .iter()
        .map(|p| Method::Beam(BeamConfig::new(beam_size, ScoringMode::pivot(p.clone()), order)))
        .collect();
    let result = run_with_backend(&cfg, built)?;
    let mut rows: Vec<PivotRow> = pivots
        .iter()
        .zip(&cfg.methods)
        .map(|(p, m)| {
            let label = m.label();
            let s = result
                .summaries
                .iter()
                .find(|s| s.method.starts_with(&label))
                .expect("every method has a summary");
            PivotRow {
                pivot: p.clone(),
                method: label,
                top_k: s.top_k.clone(),
                mean_bleu: s.mean_bleu,
                oracle_agreement: s.oracle_agreement,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.top_k[0].1.total_cmp(&a.top_k[0].1));
    Ok((rows, result))
}
