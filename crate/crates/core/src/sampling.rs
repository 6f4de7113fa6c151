//! Sampling baselines with the same per-step call budget as beam search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::ConditionalBackend;
use crate::dist::{CondDistribution, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scoring::{scoring_query, ScoringMode};
use crate::search::rank_order;
use crate::seq::{GapTask, Hypothesis, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SamplerKind {
    Pure,
    Temperature(f64),
    Nucleus(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub num_candidates: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, num_candidates: usize, seed: u64) -> Self {
        Self {
            kind,
            num_candidates,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SamplerKind::Temperature(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::Config(format!("temperature must be positive, got {t}")))
            }
            SamplerKind::Nucleus(p) if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::Config(format!("nucleus mass must lie in (0, 1], got {p}")))
            }
            _ => {}
        }
        if self.num_candidates == 0 {
            return Err(Error::Config("need at least one candidate".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let kind = match self.kind {
            SamplerKind::Pure => "pure".to_string(),
            SamplerKind::Temperature(t) => format!("temp{t}"),
            SamplerKind::Nucleus(p) => format!("nucleus{p}"),
        };
        format!("sample-{kind}-B{}", self.num_candidates)
    }
}

/// Applies temperature scaling or nucleus truncation.
pub fn transform(dist: &CondDistribution, kind: SamplerKind) -> CondDistribution {
    match kind {
        SamplerKind::Pure => dist.clone(),
        SamplerKind::Temperature(t) => {
            let scaled: Vec<f64> = dist.logp().iter().map(|lp| lp / t).collect();
            CondDistribution::normalize(&scaled).expect("scaled log-probs stay finite")
        }
        SamplerKind::Nucleus(p) => {
            let logp = dist.logp();
            let mut order: Vec<usize> = (0..logp.len()).collect();
            order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
            let mut kept = 0;
            let mut cumulative = 0.0;
            for &i in &order {
                cumulative += logp[i].exp();
                kept += 1;
                if cumulative >= p {
                    break;
                }
            }
            let keep = &order[..kept];
            let lse = crate::dist::logsumexp(&keep.iter().map(|&i| logp[i]).collect::<Vec<_>>());
            let mut out = vec![LOG_FLOOR; logp.len()];
            for &i in keep {
                out[i] = logp[i] - lse;
            }
            CondDistribution::new(out).expect("kept entries are renormalized")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub span: Vec<TokenId>,
    pub sequence: Vec<TokenId>,
    /// Accumulated log-probability under the untransformed conditionals.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutput {
    /// One entry per candidate, in candidate order (duplicates kept).
    pub samples: Vec<Sample>,
    pub scoring_calls: u64,
}

impl SampleOutput {
    /// Distinct spans ranked by accumulated log-probability.
    pub fn ranked_unique(&self) -> Vec<(Vec<TokenId>, f64)> {
        let mut ranked: Vec<(Vec<TokenId>, f64)> = self.samples.iter().map(|s| (s.span.clone(), s.score)).collect();
        ranked.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        ranked.dedup_by(|a, b| a.0 == b.0);
        ranked
    }
}

fn draw<R: Rng>(dist: &CondDistribution, content: &[TokenId], rng: &mut R) -> TokenId {
    let weights: Vec<f64> = content.iter().map(|&t| dist.get(t).exp()).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || total.is_nan() {
        // everything truncated away: fall back to the most likely token
        return *content
            .iter()
            .max_by(|&&a, &&b| dist.get(a).total_cmp(&dist.get(b)).then(b.cmp(&a)))
            .expect("content is nonempty");
    }
    let mut u = rng.random::<f64>() * total;
    for (&t, w) in content.iter().zip(&weights) {
        if u < *w {
            return t;
        }
        u -= w;
    }
    *content.last().expect("content is nonempty")
}

/// Fills the gap left to right with `num_candidates` independent samples.
/// Each step costs exactly one backend call per candidate.
pub fn sample_infill<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    cfg: &SamplerConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let vocab = backend.vocab();
    let content = vocab.content_ids();
    if content.is_empty() {
        return Err(Error::Config("vocabulary has no content tokens".into()));
    }
    let mut hyps = vec![Hypothesis::empty(); cfg.num_candidates];
    let mut scoring_calls = 0u64;
    for (step, position) in task.gap().enumerate() {
        let queries = hyps
            .iter()
            .map(|h| scoring_query(vocab, task, h, position, &ScoringMode::Standard))
            .collect::<Result<Vec<_>>>()?;
        let dists = backend.conditionals_batch(&queries)?;
        scoring_calls += queries.len() as u64;
        for (c, (h, d)) in hyps.iter_mut().zip(&dists).enumerate() {
            let mut rng = rng_for(&[cfg.seed, c as u64, step as u64]);
            let token = draw(&transform(d, cfg.kind), content, &mut rng);
            *h = h.extend(position, token, d.get(token));
        }
    }
    let samples = hyps
        .into_iter()
        .map(|h| {
            let span = h.span(task).expect("every gap position is filled");
            Sample {
                sequence: task.complete(&span),
                span,
                score: h.score(),
            }
        })
        .collect();
    Ok(SampleOutput { samples, scoring_calls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, ExactMarginalModel, JointTable};
    use crate::dist::logsumexp;
    use crate::rng::rng_for as seeded;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> CondDistribution {
        CondDistribution::new(p.iter().map(|x| x.ln()).collect()).unwrap()
    }

    #[test]
    fn unit_temperature_and_full_nucleus_are_identity() {
        let d = dist(&[0.5, 0.3, 0.2]);
        let t = transform(&d, SamplerKind::Temperature(1.0));
        let n = transform(&d, SamplerKind::Nucleus(1.0));
        for i in 0..3 {
            assert!((t.logp()[i] - d.logp()[i]).abs() < 1e-12);
            assert!((n.logp()[i] - d.logp()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn nucleus_hand_case() {
        // cumulative 0.5 + 0.3 = 0.8 >= 0.7, keep two, renormalize by 0.8
        let n = transform(&dist(&[0.5, 0.3, 0.2]), SamplerKind::Nucleus(0.7));
        assert!((n.logp()[0].exp() - 0.625).abs() < 1e-12);
        assert!((n.logp()[1].exp() - 0.375).abs() < 1e-12);
        assert_eq!(n.logp()[2], LOG_FLOOR);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::new(SamplerKind::Temperature(0.0), 1, 0)
            .validate()
            .is_err());
        assert!(SamplerConfig::new(SamplerKind::Nucleus(0.0), 1, 0).validate().is_err());
        assert!(SamplerConfig::new(SamplerKind::Nucleus(1.5), 1, 0).validate().is_err());
        assert!(SamplerConfig::new(SamplerKind::Pure, 0, 0).validate().is_err());
        assert!(SamplerConfig::new(SamplerKind::Nucleus(1.0), 3, 0).validate().is_ok());
    }

    #[test]
    fn exactly_b_calls_per_step_and_no_specials() {
        let m = CountingBackend::new(ExactMarginalModel::new(
            JointTable::random(3, 5, 1.0, &mut seeded(&[40])).unwrap(),
        ));
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0, 1], 1, 4).unwrap();
        let out = sample_infill(&m, &task, &SamplerConfig::new(SamplerKind::Pure, 5, 3)).unwrap();
        assert_eq!(out.scoring_calls, 15);
        assert_eq!(m.calls(), 15);
        assert_eq!(out.samples.len(), 5);
        assert!(out.samples.iter().all(|s| !s.span.contains(&3)));
    }

    #[test]
    fn seeded_samples_are_reproducible() {
        let m = ExactMarginalModel::new(JointTable::random(3, 5, 1.0, &mut seeded(&[41])).unwrap());
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0, 1], 0, 3).unwrap();
        let cfg = SamplerConfig::new(SamplerKind::Temperature(0.5), 4, 99);
        assert_eq!(
            sample_infill(&m, &task, &cfg).unwrap(),
            sample_infill(&m, &task, &cfg).unwrap()
        );
        let other = SamplerConfig::new(SamplerKind::Temperature(0.5), 4, 100);
        assert_ne!(
            sample_infill(&m, &task, &cfg).unwrap(),
            sample_infill(&m, &task, &other).unwrap()
        );
    }

    #[test]
    fn ranked_unique_collapses_duplicates() {
        let out = SampleOutput {
            samples: vec![
                Sample {
                    span: vec![1],
                    sequence: vec![1],
                    score: -1.0,
                },
                Sample {
                    span: vec![0],
                    sequence: vec![0],
                    score: -0.5,
                },
                Sample {
                    span: vec![1],
                    sequence: vec![1],
                    score: -1.0,
                },
            ],
            scoring_calls: 3,
        };
        assert_eq!(out.ranked_unique(), vec![(vec![0], -0.5), (vec![1], -1.0)]);
    }

    proptest! {
        #[test]
        fn transforms_preserve_argmax(
            raw in proptest::collection::vec(-8.0f64..8.0, 2..12),
            t in 0.05f64..5.0,
            p in 0.01f64..1.0,
        ) {
            let d = CondDistribution::normalize(&raw).unwrap();
            let top = d.argmax();
            let td = transform(&d, SamplerKind::Temperature(t));
            let nd = transform(&d, SamplerKind::Nucleus(p));
            prop_assert_eq!(td.argmax(), top);
            prop_assert_eq!(nd.argmax(), top);
            prop_assert!(logsumexp(td.logp()).abs() < 1e-9);
            prop_assert!(logsumexp(nd.logp()).abs() < 1e-9);
        }
    }
}
