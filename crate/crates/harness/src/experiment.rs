//! Runs every configured method on every task.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use hcb_core::backend::{ConditionalBackend, Query};
use hcb_core::metrics::{bleu_k, hit_rank};
use hcb_core::oracle::enumerate_gap;
use hcb_core::rng::hash_words;
use hcb_core::sampling::{sample_infill, SamplerConfig};
use hcb_core::search::infill_beam_search;
use hcb_core::{CondDistribution, Error, Result, TokenId, Vocab};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ablation::{ablation1_wrap, ablation2_wrap};
use crate::config::{Ablation, BuiltBackend, DataSource, ExperimentConfig, Method};
use crate::dataset;
use crate::tasks::{generate_tasks, InfillTask};

/// Rows may fail up to this fraction before the run counts as aborted.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Streaming count, mean and sum of squared deviations of mask
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MaskProbStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl MaskProbStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MaskProbStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Population variance; zero when empty.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

/// Records `p([MASK] | .)` for every answered query whose position holds a
/// mask.
struct Recorder<'a> {
    inner: &'a dyn ConditionalBackend,
    stats: Mutex<MaskProbStats>,
}

impl Recorder<'_> {
    fn record(&self, context: &[TokenId], position: usize, dist: &CondDistribution) {
        let mask = self.inner.vocab().mask_id();
        if context[position] == mask {
            self.stats.lock().expect("stats lock").push(dist.get(mask).exp());
        }
    }
}

impl ConditionalBackend for Recorder<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn expected_len(&self) -> Option<usize> {
        self.inner.expected_len()
    }

    fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
        let d = self.inner.conditionals(context, position)?;
        self.record(context, position, &d);
        Ok(d)
    }

    fn conditionals_batch(&self, queries: &[Query]) -> Result<Vec<CondDistribution>> {
        let out = self.inner.conditionals_batch(queries)?;
        for (q, d) in queries.iter().zip(&out) {
            self.record(&q.context, q.position, d);
        }
        Ok(out)
    }

    fn mask_correction(&self, dist: &CondDistribution, context: &[TokenId], position: usize) -> Result<f64> {
        self.inner.mask_correction(dist, context, position)
    }
}

/// One method on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub task_id: usize,
    pub example: usize,
    pub method: String,
    pub start: usize,
    pub truth: Vec<TokenId>,
    /// Ranked best first.
    pub predictions: Vec<Vec<TokenId>>,
    pub scores: Vec<f64>,
    pub hit_rank: Option<usize>,
    /// BLEU of the top prediction, 0-100.
    pub bleu: Option<f64>,
    /// Most probable completion under the true joint, when known.
    pub oracle_top1: Option<Vec<TokenId>>,
    pub scoring_calls: u64,
    pub probe_calls: u64,
    pub mask_probs: MaskProbStats,
    pub elapsed_us: u64,
    pub error: Option<String>,
}

impl Row {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn oracle_agrees(&self) -> Option<bool> {
        let oracle = self.oracle_top1.as_ref()?;
        Some(self.predictions.first() == Some(oracle))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub tasks: usize,
    pub errors: usize,
    /// `(k, accuracy)` over successful rows.
    pub top_k: Vec<(usize, f64)>,
    /// Arithmetic mean of per-row BLEU.
    pub mean_bleu: f64,
    pub oracle_agreement: Option<f64>,
    pub scoring_calls: u64,
    pub probe_calls: u64,
    pub mask_prob_count: u64,
    pub mask_prob_mean: f64,
    pub mask_prob_var: f64,
    pub mean_elapsed_us: f64,
}

impl MethodSummary {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.top_k.iter().find(|(kk, _)| *kk == k).map(|&(_, a)| a)
    }
}

/// Summaries per method, in order of first appearance.
pub fn aggregate(rows: &[Row], top_k: &[usize]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.method.as_str()) {
            order.push(&r.method);
        }
        groups.entry(&r.method).or_default().push(r);
    }
    order
        .into_iter()
        .map(|m| {
            let group = &groups[m];
            let ok: Vec<&&Row> = group.iter().filter(|r| r.ok()).collect();
            let n = ok.len().max(1) as f64;
            let mut mask = MaskProbStats::default();
            for r in group {
                mask.merge(&r.mask_probs);
            }
            let judged: Vec<bool> = ok.iter().filter_map(|r| r.oracle_agrees()).collect();
            MethodSummary {
                method: m.to_string(),
                tasks: group.len(),
                errors: group.len() - ok.len(),
                top_k: top_k
                    .iter()
                    .map(|&k| {
                        (
                            k,
                            ok.iter().filter(|r| r.hit_rank.is_some_and(|h| h <= k)).count() as f64 / n,
                        )
                    })
                    .collect(),
                mean_bleu: ok.iter().map(|r| r.bleu.unwrap_or(0.0)).sum::<f64>() / n,
                oracle_agreement: (!judged.is_empty())
                    .then(|| judged.iter().filter(|&&a| a).count() as f64 / judged.len() as f64),
                scoring_calls: group.iter().map(|r| r.scoring_calls).sum(),
                probe_calls: group.iter().map(|r| r.probe_calls).sum(),
                mask_prob_count: mask.count,
                mask_prob_mean: mask.mean,
                mask_prob_var: mask.variance(),
                mean_elapsed_us: group.iter().map(|r| r.elapsed_us as f64).sum::<f64>() / group.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Ordered by task, then by method as configured.
    pub rows: Vec<Row>,
    pub summaries: Vec<MethodSummary>,
    pub skipped_examples: usize,
    pub failure_rate: f64,
    /// More than [`MAX_FAILURE_RATE`] of rows failed.
    pub aborted: bool,
}

/// Loads the configured examples.
pub fn load_dataset(cfg: &ExperimentConfig, built: &BuiltBackend) -> Result<Vec<Vec<TokenId>>> {
    let corpus = match (&cfg.data, cfg.backend.joint()) {
        (DataSource::Synthetic { num_sequences }, Some(joint)) => joint.corpus(*num_sequences)?,
        (DataSource::Synthetic { .. }, None) => {
            return Err(Error::Config("synthetic data needs a synthetic backend".into()))
        }
        (DataSource::File { path }, Some(_)) => dataset::load_ids(path)?,
        #[cfg(feature = "remote")]
        (DataSource::File { path }, None) => {
            let remote = built
                .remote
                .as_ref()
                .ok_or_else(|| Error::Config("text datasets need a remote backend".into()))?;
            dataset::load_text(path, |line| remote.tokenize(line))?
        }
        #[cfg(not(feature = "remote"))]
        (DataSource::File { .. }, None) => {
            let _ = built;
            return Err(Error::Config("text datasets need a remote backend".into()));
        }
    };
    if let Some(n) = built.backend.expected_len() {
        if let Some(bad) = corpus.iter().find(|s| s.len() != n) {
            return Err(Error::InvalidInput(format!(
                "example of length {} does not match model length {n}",
                bad.len()
            )));
        }
    }
    Ok(corpus)
}

fn method_backend(base: &Arc<dyn ConditionalBackend>, ablation: Ablation, seed: u64) -> Box<dyn ConditionalBackend> {
    match ablation {
        Ablation::None => Box::new(base.clone()),
        Ablation::ContextScramble => Box::new(ablation1_wrap(base.clone(), seed)),
        Ablation::TokenSwap => Box::new(ablation2_wrap(base.clone(), seed)),
    }
}

fn run_one(
    backend: &dyn ConditionalBackend,
    task: &InfillTask,
    method: &Method,
    label: &str,
    run_seed: u64,
    oracle: Option<&Vec<TokenId>>,
) -> Row {
    let recorder = Recorder {
        inner: backend,
        stats: Mutex::new(MaskProbStats::default()),
    };
    let started = Instant::now();
    let outcome = match method {
        Method::Beam(cfg) => infill_beam_search(&recorder, &task.task, cfg).map(|out| {
            (
                out.spans(),
                out.completions.iter().map(|c| c.score).collect(),
                out.scoring_calls,
                out.probe_calls,
            )
        }),
        Method::Sample(cfg) => {
            let seeded = SamplerConfig {
                seed: hash_words([run_seed, task.id as u64, cfg.seed]),
                ..cfg.clone()
            };
            sample_infill(&recorder, &task.task, &seeded).map(|out| {
                let ranked = out.ranked_unique();
                (
                    ranked.iter().map(|(s, _)| s.clone()).collect(),
                    ranked.iter().map(|&(_, sc)| sc).collect(),
                    out.scoring_calls,
                    0,
                )
            })
        }
    };
    let elapsed_us = started.elapsed().as_micros() as u64;
    let mut row = Row {
        task_id: task.id,
        example: task.example,
        method: label.to_string(),
        start: task.task.start(),
        truth: task.truth.clone(),
        predictions: Vec::new(),
        scores: Vec::new(),
        hit_rank: None,
        bleu: None,
        oracle_top1: oracle.cloned(),
        scoring_calls: 0,
        probe_calls: 0,
        mask_probs: *recorder.stats.lock().expect("stats lock"),
        elapsed_us,
        error: None,
    };
    match outcome.and_then(|(preds, scores, calls, probes)| {
        let bleu = preds.first().map(|top| bleu_k(top, &task.truth)).transpose()?;
        Ok((preds, scores, calls, probes, bleu))
    }) {
        Ok((preds, scores, calls, probes, bleu)) => {
            row.hit_rank = hit_rank(&preds, &task.truth);
            row.predictions = preds;
            row.scores = scores;
            row.scoring_calls = calls;
            row.probe_calls = probes;
            row.bleu = bleu;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs the experiment on an already-built backend.
pub fn run_with_backend(cfg: &ExperimentConfig, built: &BuiltBackend) -> Result<ExperimentResult> {
    cfg.validate()?;
    let corpus = load_dataset(cfg, built)?;
    let set = generate_tasks(built.backend.vocab(), &corpus, cfg.gap, cfg.num_examples, cfg.seed)?;
    let oracles: Vec<Option<Vec<TokenId>>> = set
        .tasks
        .iter()
        .map(|t| {
            let reference = built.reference.as_ref()?;
            enumerate_gap(reference.joint(), &t.task)
                .ok()?
                .into_iter()
                .next()
                .map(|(s, _)| s)
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // a shared scramble buffer makes results depend on call order
    let sequential = cfg.workers == 1 || cfg.ablation == Ablation::ContextScramble;

    let mut per_method: Vec<Vec<Row>> = Vec::with_capacity(cfg.methods.len());
    for method in &cfg.methods {
        let backend = method_backend(&built.backend, cfg.ablation, cfg.seed);
        let label = match cfg.ablation {
            Ablation::None => method.label(),
            Ablation::ContextScramble => format!("{}+context", method.label()),
            Ablation::TokenSwap => format!("{}+token", method.label()),
        };
        let job = |t: &InfillTask| run_one(backend.as_ref(), t, method, &label, cfg.seed, oracles[t.id].as_ref());
        let rows: Vec<Row> = if sequential {
            set.tasks.iter().map(job).collect()
        } else {
            pool.install(|| set.tasks.par_iter().map(job).collect())
        };
        per_method.push(rows);
    }
    let mut rows = Vec::with_capacity(set.tasks.len() * cfg.methods.len());
    for t in 0..set.tasks.len() {
        for m in &per_method {
            rows.push(m[t].clone());
        }
    }
    let failures = rows.iter().filter(|r| !r.ok()).count();
    let failure_rate = failures as f64 / rows.len().max(1) as f64;
    Ok(ExperimentResult {
        config: cfg.clone(),
        summaries: aggregate(&rows, &cfg.top_k),
        rows,
        skipped_examples: set.skipped,
        failure_rate,
        aborted: failure_rate > MAX_FAILURE_RATE,
    })
}

/// Builds the backend, generates tasks and runs every method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    run_with_backend(cfg, &cfg.backend.build()?)
}
