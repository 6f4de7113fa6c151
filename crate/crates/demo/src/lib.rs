//! Interactive demo over small synthetic joints.
//!
//! Each exported function takes plain numbers and strings and returns a
//! JSON string. Errors come back as `{"error": "..."}`. The `*_json`
//! functions are the same operations returning `serde_json::Value`, usable
//! from native code and tests.

use hcb_core::backend::{ConditionalBackend, ExactMarginalModel, JointTable, PerturbedModel};
use hcb_core::dist::CondDistribution;
use hcb_core::oracle::{ci_residual, enumerate_gap, pivot_spread};
use hcb_core::rng::rng_for;
use hcb_core::sampling::{transform, SamplerKind};
use hcb_core::search::{all_spans, infill_beam_search, BeamConfig, OrderPolicy};
use hcb_core::{GapTask, ScoringMode, TokenId};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_ENTRIES: usize = 1 << 16;

fn joint(alphabet: usize, length: usize, seed: u64, spread: f64) -> Result<JointTable, String> {
    if alphabet < 2 || length < 2 {
        return Err("alphabet and length must be at least 2".into());
    }
    let entries = (alphabet as u128).checked_pow(length as u32).unwrap_or(u128::MAX);
    if entries > MAX_ENTRIES as u128 {
        return Err(format!(
            "{alphabet}^{length} entries is too many for the demo (max {MAX_ENTRIES})"
        ));
    }
    JointTable::random(alphabet, length, spread, &mut rng_for(&[seed])).map_err(|e| e.to_string())
}

fn parse_ids(text: &str) -> Result<Vec<TokenId>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("not a token id: {s:?}")))
        .collect()
}

fn parse_order(order: &str) -> Result<OrderPolicy, String> {
    match order {
        "ltr" => Ok(OrderPolicy::LeftToRight),
        "b2w" => Ok(OrderPolicy::BestToWorst),
        other => Err(format!("unknown order {other:?}")),
    }
}

fn method_json(
    backend: &dyn ConditionalBackend,
    task: &GapTask,
    mode: ScoringMode,
    beam: usize,
    order: OrderPolicy,
) -> Result<Value, String> {
    let label = mode.label();
    let out = infill_beam_search(backend, task, &BeamConfig::new(beam, mode, order)).map_err(|e| e.to_string())?;
    Ok(json!({
        "mode": label,
        "completions": out.completions.iter().map(|c| json!({
            "span": c.span,
            "score": c.score,
            "fill_order": c.fill_order,
        })).collect::<Vec<_>>(),
        "scoring_calls": out.scoring_calls,
        "probe_calls": out.probe_calls,
    }))
}

/// Runs Standard, HCB-mask and HCB-pivot beams on one masked sequence and
/// lists the exact top completions next to them. An empty `sequence` draws
/// one from the joint.
#[allow(clippy::too_many_arguments)]
pub fn compare_beams_json(
    alphabet: usize,
    length: usize,
    seed: u64,
    spread: f64,
    delta: f64,
    sequence: &str,
    start: usize,
    gap: usize,
    beam: usize,
    order: &str,
) -> Result<Value, String> {
    let joint = joint(alphabet, length, seed, spread)?;
    let order = parse_order(order)?;
    let seq = if sequence.trim().is_empty() {
        joint.sample_corpus(1, &mut rng_for(&[seed, 1])).remove(0)
    } else {
        parse_ids(sequence)?
    };
    if seq.len() != length {
        return Err(format!("sequence has {} tokens, expected {length}", seq.len()));
    }
    if beam == 0 {
        return Err("beam size must be at least 1".into());
    }
    let exact = ExactMarginalModel::new(joint.clone());
    let (task, truth) = GapTask::mask_span(exact.vocab(), &seq, start, start + gap).map_err(|e| e.to_string())?;
    let perturbed = PerturbedModel::new(exact, delta, seed).map_err(|e| e.to_string())?;
    let oracle = enumerate_gap(&joint, &task).map_err(|e| e.to_string())?;
    let methods = [
        ScoringMode::Standard,
        ScoringMode::HcbMask,
        ScoringMode::pivot(vec![0; gap]),
    ]
    .into_iter()
    .map(|mode| method_json(&perturbed, &task, mode, beam, order))
    .collect::<Result<Vec<_>, _>>()?;
    Ok(json!({
        "sequence": seq,
        "masked": task.tokens(),
        "truth": truth,
        "oracle": oracle.iter().take(beam.max(5)).map(|(s, lp)| json!({"span": s, "logp": lp})).collect::<Vec<_>>(),
        "methods": methods,
    }))
}

/// For each perturbation strength, the mean KL between the perturbed
/// mask conditionals and the exact ones, the pivot spread, and how often
/// Standard and HCB-pivot beams find the exact argmax.
pub fn residual_curve_json(
    alphabet: usize,
    length: usize,
    seed: u64,
    deltas: &str,
    gap: usize,
    tasks: usize,
    beam: usize,
) -> Result<Value, String> {
    let deltas: Vec<f64> = deltas
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("not a number: {s:?}")))
        .collect::<Result<_, _>>()?;
    if gap == 0 || gap >= length {
        return Err(format!("gap must lie in 1..{length}"));
    }
    if tasks == 0 || beam == 0 {
        return Err("tasks and beam size must be at least 1".into());
    }
    let joint = joint(alphabet, length, seed, 1.0)?;
    let exact = ExactMarginalModel::new(joint.clone());
    let mut rng = rng_for(&[seed, 2]);
    let corpus = joint.sample_corpus(tasks, &mut rng);
    let content = exact.vocab().content_ids().to_vec();
    let pivots: Vec<Vec<TokenId>> = content.iter().map(|&t| vec![t; gap]).collect();
    let completions = all_spans(&content, gap);
    let mut setup = Vec::with_capacity(tasks);
    for (i, seq) in corpus.iter().enumerate() {
        let start = (hcb_core::rng::hash_words([seed, i as u64]) % (length - gap + 1) as u64) as usize;
        let (task, truth) = GapTask::mask_span(exact.vocab(), seq, start, start + gap).map_err(|e| e.to_string())?;
        let best = enumerate_gap(&joint, &task).map_err(|e| e.to_string())?.remove(0).0;
        setup.push((task, truth, best));
    }
    let pairs: Vec<(GapTask, Vec<TokenId>)> = setup.iter().map(|(t, truth, _)| (t.clone(), truth.clone())).collect();
    let mut rows = Vec::new();
    for &delta in &deltas {
        let model = PerturbedModel::new(exact.clone(), delta, seed).map_err(|e| e.to_string())?;
        let ci = ci_residual(&model, &exact, &pairs).map_err(|e| e.to_string())?;
        let mut spread = 0.0f64;
        let (mut standard, mut pivot) = (0, 0);
        for (task, _, best) in &setup {
            spread = spread.max(pivot_spread(&model, task, &pivots, &completions).map_err(|e| e.to_string())?);
            for (mode, hits) in [
                (ScoringMode::Standard, &mut standard),
                (ScoringMode::pivot(vec![0; gap]), &mut pivot),
            ] {
                let out = infill_beam_search(&model, task, &BeamConfig::new(beam, mode, OrderPolicy::LeftToRight))
                    .map_err(|e| e.to_string())?;
                if &out.completions[0].span == best {
                    *hits += 1;
                }
            }
        }
        rows.push(json!({
            "delta": delta,
            "mean_kl": ci.mean_kl,
            "pivot_spread": spread,
            "standard_top1": standard as f64 / tasks as f64,
            "pivot_top1": pivot as f64 / tasks as f64,
        }));
    }
    Ok(json!({ "tasks": tasks, "rows": rows }))
}

/// Probabilities of a distribution given as log-scores, before and after a
/// sampler transform (`pure`, `temperature` or `nucleus`).
pub fn sampler_transform_json(scores: &str, kind: &str, param: f64) -> Result<Value, String> {
    let scores: Vec<f64> = scores
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("not a number: {s:?}")))
        .collect::<Result<_, _>>()?;
    let kind = match kind {
        "pure" => SamplerKind::Pure,
        "temperature" if param > 0.0 && param.is_finite() => SamplerKind::Temperature(param),
        "nucleus" if param > 0.0 && param <= 1.0 => SamplerKind::Nucleus(param),
        "temperature" | "nucleus" => return Err(format!("parameter {param} out of range for {kind}")),
        other => return Err(format!("unknown sampler {other:?}")),
    };
    let dist = CondDistribution::normalize(&scores).map_err(|e| e.to_string())?;
    let probs = |d: &CondDistribution| d.logp().iter().map(|lp| lp.exp()).collect::<Vec<f64>>();
    Ok(json!({ "before": probs(&dist), "after": probs(&transform(&dist, kind)) }))
}

fn respond(result: Result<Value, String>) -> String {
    result.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn compare_beams(
    alphabet: usize,
    length: usize,
    seed: u32,
    spread: f64,
    delta: f64,
    sequence: &str,
    start: usize,
    gap: usize,
    beam: usize,
    order: &str,
) -> String {
    respond(compare_beams_json(
        alphabet,
        length,
        seed as u64,
        spread,
        delta,
        sequence,
        start,
        gap,
        beam,
        order,
    ))
}

#[wasm_bindgen]
pub fn residual_curve(
    alphabet: usize,
    length: usize,
    seed: u32,
    deltas: &str,
    gap: usize,
    tasks: usize,
    beam: usize,
) -> String {
    respond(residual_curve_json(
        alphabet,
        length,
        seed as u64,
        deltas,
        gap,
        tasks,
        beam,
    ))
}

#[wasm_bindgen]
pub fn sampler_transform(scores: &str, kind: &str, param: f64) -> String {
    respond(sampler_transform_json(scores, kind, param))
}
