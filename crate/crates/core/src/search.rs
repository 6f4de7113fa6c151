//! Infilling beam search over a gap and its autoregressive special case.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::backend::{ConditionalBackend, Query};
use crate::dist::CondDistribution;
use crate::error::{Error, Result};
use crate::scoring::{scores_from_dist, scoring_query, ScoringMode};
use crate::seq::{realize, GapTask, Hypothesis, TokenId, Vocab};

/// Order in which a hypothesis fills its remaining gap positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderPolicy {
    LeftToRight,
    /// Most confident position first: the one whose best content token has
    /// the highest probability.
    BestToWorst,
}

impl OrderPolicy {
    pub fn label(self) -> &'static str {
        match self {
            OrderPolicy::LeftToRight => "ltr",
            OrderPolicy::BestToWorst => "b2w",
        }
    }
}

/// Whether best-to-worst picks a position for each hypothesis separately or
/// one position per step for the whole beam (taken from the beam leader).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OrderScope {
    #[default]
    PerHypothesis,
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub mode: ScoringMode,
    pub order: OrderPolicy,
    #[serde(default)]
    pub order_scope: OrderScope,
    /// Measure best-to-worst confidence on the scoring mode's own
    /// realization instead of the mask realization.
    #[serde(default)]
    pub mode_consistent_confidence: bool,
}

impl BeamConfig {
    pub fn new(beam_size: usize, mode: ScoringMode, order: OrderPolicy) -> Self {
        Self {
            beam_size,
            mode,
            order,
            order_scope: OrderScope::PerHypothesis,
            mode_consistent_confidence: false,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}-B{}", self.mode.label(), self.order.label(), self.beam_size)
    }
}

/// A finished infill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub span: Vec<TokenId>,
    pub sequence: Vec<TokenId>,
    pub score: f64,
    pub fill_order: Vec<usize>,
    pub step_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutput {
    /// Ranked best first, at most `beam_size` entries.
    pub completions: Vec<Completion>,
    /// Backend queries issued for scoring (one per live hypothesis per step).
    pub scoring_calls: u64,
    /// Backend queries issued only to choose best-to-worst positions.
    pub probe_calls: u64,
    /// Number of live hypotheses expanded at each step.
    pub live_per_step: Vec<usize>,
}

impl SearchOutput {
    pub fn spans(&self) -> Vec<Vec<TokenId>> {
        self.completions.iter().map(|c| c.span.clone()).collect()
    }
}

/// Engine tie-break: higher score first, then the lexicographically smaller
/// token-id tuple.
pub fn rank_order(a_score: f64, a_span: &[TokenId], b_score: f64, b_span: &[TokenId]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_span.cmp(b_span))
}

fn confidence(dist: &CondDistribution, vocab: &Vocab) -> f64 {
    vocab
        .content_ids()
        .iter()
        .map(|&t| dist.get(t))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn probe_query(
    vocab: &Vocab,
    task: &GapTask,
    hyp: &Hypothesis,
    position: usize,
    mode: Option<&ScoringMode>,
) -> Result<Query> {
    match mode {
        Some(mode) => scoring_query(vocab, task, hyp, position, mode),
        None => Ok(Query::new(realize(vocab, task, hyp, vocab.mask_id())?, position)),
    }
}

/// Picks the next gap position for `hyp`. Returns the position and the
/// number of backend calls spent on probing.
pub fn select_next_position<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    hyp: &Hypothesis,
    order: OrderPolicy,
) -> Result<(usize, u64)> {
    select_position_with(backend, task, hyp, order, None)
}

fn select_position_with<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    hyp: &Hypothesis,
    order: OrderPolicy,
    probe_mode: Option<&ScoringMode>,
) -> Result<(usize, u64)> {
    let unfilled = hyp.unfilled(task);
    let first = *unfilled
        .first()
        .ok_or_else(|| Error::InvalidQuery("hypothesis has no unfilled position".into()))?;
    if unfilled.len() == 1 || order == OrderPolicy::LeftToRight {
        return Ok((first, 0));
    }
    let vocab = backend.vocab();
    let queries = unfilled
        .iter()
        .map(|&p| probe_query(vocab, task, hyp, p, probe_mode))
        .collect::<Result<Vec<_>>>()?;
    let dists = backend.conditionals_batch(&queries)?;
    let mut best = (first, f64::NEG_INFINITY);
    for (&p, d) in unfilled.iter().zip(&dists) {
        let c = confidence(d, vocab);
        if c > best.1 {
            best = (p, c);
        }
    }
    Ok((best.0, queries.len() as u64))
}

struct Candidate {
    parent: usize,
    position: usize,
    token: TokenId,
    score: f64,
    step: f64,
}

fn partial_key(task: &GapTask, hyp: &Hypothesis, position: usize, token: TokenId) -> Vec<TokenId> {
    // unfilled slots sort after every real token
    task.gap()
        .map(|p| {
            if p == position {
                token
            } else {
                hyp.filled().get(&p).copied().unwrap_or(TokenId::MAX)
            }
        })
        .collect()
}

fn compare_candidates(task: &GapTask, beam: &[Hypothesis], a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| {
        let ka = partial_key(task, &beam[a.parent], a.position, a.token);
        let kb = partial_key(task, &beam[b.parent], b.position, b.token);
        ka.cmp(&kb).then_with(|| {
            let mut oa = beam[a.parent].fill_order().to_vec();
            oa.push(a.position);
            let mut ob = beam[b.parent].fill_order().to_vec();
            ob.push(b.position);
            oa.cmp(&ob)
        })
    })
}

/// Infilling beam search: at each step every live hypothesis picks its next
/// position, is expanded by every content token under the configured scoring
/// function, and the best `beam_size` extensions survive.
pub fn infill_beam_search<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    cfg: &BeamConfig,
) -> Result<SearchOutput> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    let vocab = backend.vocab();
    cfg.mode.validate(vocab, task)?;
    if let Some(n) = backend.expected_len() {
        if n != task.len() {
            return Err(Error::InvalidQuery(format!(
                "task length {} does not match backend length {n}",
                task.len()
            )));
        }
    }
    let content = vocab.content_ids();
    if content.is_empty() {
        return Err(Error::Config("vocabulary has no content tokens".into()));
    }
    let probe_mode = cfg.mode_consistent_confidence.then_some(&cfg.mode);

    let mut beam = vec![Hypothesis::empty()];
    let mut scoring_calls = 0u64;
    let mut probe_calls = 0u64;
    let mut live_per_step = Vec::with_capacity(task.gap_len());

    for _ in 0..task.gap_len() {
        live_per_step.push(beam.len());
        let positions: Vec<usize> = match (cfg.order, cfg.order_scope) {
            (OrderPolicy::BestToWorst, OrderScope::PerStep) => {
                let (p, probes) = select_position_with(backend, task, &beam[0], cfg.order, probe_mode)?;
                probe_calls += probes;
                vec![p; beam.len()]
            }
            _ => beam
                .iter()
                .map(|h| {
                    let (p, probes) = select_position_with(backend, task, h, cfg.order, probe_mode)?;
                    probe_calls += probes;
                    Ok(p)
                })
                .collect::<Result<_>>()?,
        };
        let queries = beam
            .iter()
            .zip(&positions)
            .map(|(h, &p)| scoring_query(vocab, task, h, p, &cfg.mode))
            .collect::<Result<Vec<_>>>()?;
        let dists = backend.conditionals_batch(&queries)?;
        if dists.len() != queries.len() {
            return Err(Error::Protocol(format!(
                "backend answered {} of {} queries",
                dists.len(),
                queries.len()
            )));
        }
        scoring_calls += queries.len() as u64;

        let mut candidates = Vec::with_capacity(beam.len() * content.len());
        for (parent, ((h, q), d)) in beam.iter().zip(&queries).zip(&dists).enumerate() {
            let scores = scores_from_dist(backend, task, q, d, &cfg.mode)?;
            for &t in content {
                let step = scores[t as usize];
                candidates.push(Candidate {
                    parent,
                    position: q.position,
                    token: t,
                    score: h.score() + step,
                    step,
                });
            }
        }
        let keep = cfg.beam_size.min(candidates.len());
        if keep < candidates.len() {
            candidates.select_nth_unstable_by(keep - 1, |a, b| compare_candidates(task, &beam, a, b));
            candidates.truncate(keep);
        }
        candidates.sort_by(|a, b| compare_candidates(task, &beam, a, b));
        beam = candidates
            .iter()
            .map(|c| beam[c.parent].extend(c.position, c.token, c.step))
            .collect();
    }

    let completions = beam
        .into_iter()
        .map(|h| {
            let span = h.span(task).expect("every gap position is filled");
            Completion {
                sequence: task.complete(&span),
                span,
                score: h.score(),
                fill_order: h.fill_order().to_vec(),
                step_scores: h.step_scores().to_vec(),
            }
        })
        .collect();
    Ok(SearchOutput {
        completions,
        scoring_calls,
        probe_calls,
        live_per_step,
    })
}

/// Left-to-right beam search over an all-mask sequence of length `len`
/// with the standard score: ordinary autoregressive beam search when the
/// backend's masked-suffix conditionals are prefix conditionals.
pub fn autoregressive_beam_search<B: ConditionalBackend + ?Sized>(
    backend: &B,
    len: usize,
    beam_size: usize,
) -> Result<SearchOutput> {
    let vocab = backend.vocab();
    let task = GapTask::new(vocab, vec![vocab.mask_id(); len], 0, len)?;
    infill_beam_search(
        backend,
        &task,
        &BeamConfig::new(beam_size, ScoringMode::Standard, OrderPolicy::LeftToRight),
    )
}

/// Replays the path beam search would take to produce `span` and returns its
/// cumulative score under `mode` and `order`.
pub fn score_completion<B: ConditionalBackend + ?Sized>(
    backend: &B,
    task: &GapTask,
    span: &[TokenId],
    mode: &ScoringMode,
    order: OrderPolicy,
) -> Result<Hypothesis> {
    if span.len() != task.gap_len() {
        return Err(Error::InvalidInput(format!(
            "span length {} does not match gap length {}",
            span.len(),
            task.gap_len()
        )));
    }
    mode.validate(backend.vocab(), task)?;
    let mut hyp = Hypothesis::empty();
    while !hyp.is_complete(task) {
        let (p, _) = select_next_position(backend, task, &hyp, order)?;
        let token = span[p - task.start()];
        let query = scoring_query(backend.vocab(), task, &hyp, p, mode)?;
        let dist = backend.conditionals(&query.context, query.position)?;
        let scores = scores_from_dist(backend, task, &query, &dist, mode)?;
        hyp = hyp.extend(p, token, scores[token as usize]);
    }
    Ok(hyp)
}

/// Every content-token span of length `gap_len`, in lexicographic order.
pub fn all_spans(content: &[TokenId], gap_len: usize) -> Vec<Vec<TokenId>> {
    let mut out: Vec<Vec<TokenId>> = vec![Vec::new()];
    for _ in 0..gap_len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                content.iter().map(move |&t| {
                    let mut s = prefix.clone();
                    s.push(t);
                    s
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, ExactMarginalModel, JointTable};
    use crate::dist::argmax;
    use crate::rng::rng_for;
    use crate::scoring::step_scores;

    fn model(a: usize, n: usize, seed: u64) -> ExactMarginalModel {
        ExactMarginalModel::new(JointTable::random(a, n, 1.5, &mut rng_for(&[seed])).unwrap())
    }

    #[test]
    fn single_position_beam_is_argsort() {
        let m = model(4, 3, 1);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2], 1, 2).unwrap();
        let out = infill_beam_search(
            &m,
            &task,
            &BeamConfig::new(10, ScoringMode::Standard, OrderPolicy::LeftToRight),
        )
        .unwrap();
        let scores = step_scores(&m, &task, &Hypothesis::empty(), 1, &ScoringMode::Standard).unwrap();
        let mut expect: Vec<TokenId> = m.vocab().content_ids().to_vec();
        expect.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
        let got: Vec<TokenId> = out.completions.iter().map(|c| c.span[0]).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn beam_one_is_greedy() {
        let m = model(3, 5, 2);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0, 1], 1, 4).unwrap();
        let out = infill_beam_search(
            &m,
            &task,
            &BeamConfig::new(1, ScoringMode::Standard, OrderPolicy::LeftToRight),
        )
        .unwrap();
        let mut hyp = Hypothesis::empty();
        for p in task.gap() {
            let s = step_scores(&m, &task, &hyp, p, &ScoringMode::Standard).unwrap();
            let content: Vec<f64> = m.vocab().content_ids().iter().map(|&t| s[t as usize]).collect();
            let best = argmax(&content).unwrap() as TokenId;
            hyp = hyp.extend(p, best, s[best as usize]);
        }
        assert_eq!(out.completions[0].span, hyp.span(&task).unwrap());
        assert!((out.completions[0].score - hyp.score()).abs() < 1e-12);
    }

    #[test]
    fn zero_beam_is_config_error() {
        let m = model(2, 3, 3);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 0], 0, 1).unwrap();
        let err = infill_beam_search(
            &m,
            &task,
            &BeamConfig::new(0, ScoringMode::Standard, OrderPolicy::LeftToRight),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn mask_never_expanded() {
        let m = model(2, 3, 4);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 0], 0, 3).unwrap();
        let out = infill_beam_search(
            &m,
            &task,
            &BeamConfig::new(50, ScoringMode::HcbMask, OrderPolicy::BestToWorst),
        )
        .unwrap();
        assert_eq!(out.completions.len(), 8);
        assert!(out.completions.iter().all(|c| !c.span.contains(&m.vocab().mask_id())));
    }

    #[test]
    fn one_unfilled_position_is_chosen_by_both_policies() {
        let m = model(3, 4, 5);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0], 1, 3).unwrap();
        let hyp = Hypothesis::empty().extend(1, 0, 0.0);
        for order in [OrderPolicy::LeftToRight, OrderPolicy::BestToWorst] {
            assert_eq!(select_next_position(&m, &task, &hyp, order).unwrap(), (2, 0));
        }
    }

    #[test]
    fn uniform_backend_best_to_worst_picks_leftmost() {
        let m = ExactMarginalModel::new(JointTable::uniform(3, 5).unwrap());
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0, 1], 1, 4).unwrap();
        let (p, probes) = select_next_position(&m, &task, &Hypothesis::empty(), OrderPolicy::BestToWorst).unwrap();
        assert_eq!(p, 1);
        assert_eq!(probes, 3);
    }

    #[test]
    fn best_to_worst_prefers_near_deterministic_position() {
        // Joint = product of near-uniform left marginals and a right
        // position almost surely equal to token 2.
        let (a, n) = (3usize, 4usize);
        let mut weights = Vec::with_capacity(81);
        let probe = JointTable::uniform(a, n).unwrap();
        for idx in 0..probe.num_entries() {
            let s = probe.sequence(idx);
            weights.push(if s[2] == 2 { 0.0 } else { -8.0 } + 0.01 * s[1] as f64);
        }
        let m = ExactMarginalModel::new(JointTable::from_log_weights(a, n, weights).unwrap());
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0], 1, 3).unwrap();
        let (p, _) = select_next_position(&m, &task, &Hypothesis::empty(), OrderPolicy::BestToWorst).unwrap();
        assert_eq!(p, 2);
    }

    #[test]
    fn autoregressive_single_position_is_unconditional_argsort() {
        let m = model(4, 1, 6);
        let out = autoregressive_beam_search(&m, 1, 4).unwrap();
        let lp = m.joint().log_table();
        let mut expect: Vec<TokenId> = (0..4).collect();
        expect.sort_by(|&a, &b| lp[b as usize].total_cmp(&lp[a as usize]));
        assert_eq!(out.completions.iter().map(|c| c.span[0]).collect::<Vec<_>>(), expect);
    }

    #[test]
    fn autoregressive_exhaustive_matches_chain_rule() {
        let m = model(2, 3, 7);
        let out = autoregressive_beam_search(&m, 3, 8).unwrap();
        let joint = m.joint();
        let mut expect: Vec<(Vec<TokenId>, f64)> = (0..8).map(|i| (joint.sequence(i), joint.log_table()[i])).collect();
        expect.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        let offset = 3.0 * m.log_content_mass();
        for (c, (seq, lp)) in out.completions.iter().zip(&expect) {
            assert_eq!(&c.span, seq);
            assert!((c.score - offset - lp).abs() < 1e-9);
        }
    }

    #[test]
    fn autoregressive_beam_one_is_greedy() {
        let m = model(3, 4, 8);
        let out = autoregressive_beam_search(&m, 4, 1).unwrap();
        let task = GapTask::new(m.vocab(), vec![3; 4], 0, 4).unwrap();
        let ltr = infill_beam_search(
            &m,
            &task,
            &BeamConfig::new(1, ScoringMode::Standard, OrderPolicy::LeftToRight),
        )
        .unwrap();
        assert_eq!(out, ltr);
    }

    #[test]
    fn call_counts_follow_live_hypotheses() {
        let m = CountingBackend::new(model(3, 5, 9));
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0, 1], 1, 4).unwrap();
        let out = infill_beam_search(
            &m,
            &task,
            &BeamConfig::new(4, ScoringMode::Standard, OrderPolicy::LeftToRight),
        )
        .unwrap();
        assert_eq!(out.live_per_step, vec![1, 3, 4]);
        assert_eq!(out.scoring_calls, 8);
        assert_eq!(out.probe_calls, 0);
        assert_eq!(m.calls(), 8);

        m.reset();
        let out = infill_beam_search(
            &m,
            &task,
            &BeamConfig::new(4, ScoringMode::Standard, OrderPolicy::BestToWorst),
        )
        .unwrap();
        // probes: 3 unfilled at step 1, 2 for each of 3 hypotheses at step 2
        assert_eq!(out.probe_calls, 3 + 6);
        assert_eq!(m.calls(), out.scoring_calls + out.probe_calls);
    }

    #[test]
    fn per_step_scope_fills_same_position_across_beam() {
        let m = model(3, 5, 10);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0, 1], 1, 4).unwrap();
        let mut cfg = BeamConfig::new(4, ScoringMode::HcbMask, OrderPolicy::BestToWorst);
        cfg.order_scope = OrderScope::PerStep;
        let out = infill_beam_search(&m, &task, &cfg).unwrap();
        let order = &out.completions[0].fill_order;
        assert!(out.completions.iter().all(|c| &c.fill_order == order));
    }

    #[test]
    fn replayed_score_matches_beam_score() {
        let m = model(3, 5, 11);
        let (task, _) = GapTask::mask_span(m.vocab(), &[0, 1, 2, 0, 1], 1, 4).unwrap();
        for order in [OrderPolicy::LeftToRight, OrderPolicy::BestToWorst] {
            let out = infill_beam_search(&m, &task, &BeamConfig::new(3, ScoringMode::HcbMask, order)).unwrap();
            for c in &out.completions {
                let h = score_completion(&m, &task, &c.span, &ScoringMode::HcbMask, order).unwrap();
                assert_eq!(h.score(), c.score);
                assert_eq!(h.fill_order(), c.fill_order.as_slice());
            }
        }
    }

    #[test]
    fn all_spans_enumerates_lexicographically() {
        let spans = all_spans(&[0, 1], 2);
        assert_eq!(spans, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}
