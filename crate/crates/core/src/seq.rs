//! Vocabulary, gap tasks, and partial infills.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Token inventory with a designated mask token and a set of special
/// (non-content) ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    mask_id: TokenId,
    special_ids: BTreeSet<TokenId>,
    #[serde(skip)]
    content: Vec<TokenId>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, mask_id: TokenId, special_ids: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        let v = tokens.len();
        let mut special: BTreeSet<TokenId> = special_ids.into_iter().collect();
        special.insert(mask_id);
        if let Some(&bad) = special.iter().find(|&&t| t as usize >= v) {
            return Err(Error::InvalidToken {
                token: bad,
                vocab_size: v,
            });
        }
        let mut seen = HashMap::with_capacity(v);
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = seen.insert(t.as_str(), i) {
                return Err(Error::InvalidInput(format!(
                    "duplicate token {t:?} at ids {prev} and {i}"
                )));
            }
        }
        let content = (0..v as TokenId).filter(|t| !special.contains(t)).collect();
        Ok(Self {
            tokens,
            mask_id,
            special_ids: special,
            content,
        })
    }

    /// `alphabet` content tokens `t0..t{A-1}` followed by `[MASK]` at id `A`.
    pub fn synthetic(alphabet: usize) -> Self {
        let mut tokens: Vec<String> = (0..alphabet).map(|i| format!("t{i}")).collect();
        tokens.push("[MASK]".to_string());
        Self::new(tokens, alphabet as TokenId, []).expect("synthetic vocabulary is valid")
    }

    /// Vocabulary known only by size, as reported by a remote model. Token
    /// strings are the decimal ids.
    pub fn opaque(size: usize, mask_id: TokenId, special_ids: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        Self::new((0..size).map(|i| i.to_string()).collect(), mask_id, special_ids)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn special_ids(&self) -> &BTreeSet<TokenId> {
        &self.special_ids
    }

    pub fn is_special(&self, token: TokenId) -> bool {
        self.special_ids.contains(&token)
    }

    /// Content (non-special) token ids in ascending order.
    pub fn content_ids(&self) -> &[TokenId] {
        &self.content
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == token).map(|i| i as TokenId)
    }

    pub fn check(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidToken {
                token,
                vocab_size: self.len(),
            })
        }
    }
}

/// A sequence with one contiguous masked span `[start, end)` to infill.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GapTask {
    tokens: Vec<TokenId>,
    start: usize,
    end: usize,
}

impl GapTask {
    pub fn new(vocab: &Vocab, tokens: Vec<TokenId>, start: usize, end: usize) -> Result<Self> {
        if !(start < end && end <= tokens.len()) {
            return Err(Error::InvalidTask(format!(
                "span [{start}, {end}) invalid for length {}",
                tokens.len()
            )));
        }
        for (i, &t) in tokens.iter().enumerate() {
            vocab.check(t)?;
            let in_gap = (start..end).contains(&i);
            if in_gap != (t == vocab.mask_id()) {
                return Err(Error::InvalidTask(format!(
                    "position {i} holds {t}; gap positions must hold the mask and others must not"
                )));
            }
        }
        Ok(Self { tokens, start, end })
    }

    /// Masks `[start, end)` of a complete sequence. Returns the task and the
    /// removed span.
    pub fn mask_span(vocab: &Vocab, sequence: &[TokenId], start: usize, end: usize) -> Result<(Self, Vec<TokenId>)> {
        if !(start < end && end <= sequence.len()) {
            return Err(Error::InvalidTask(format!(
                "span [{start}, {end}) invalid for length {}",
                sequence.len()
            )));
        }
        let mut tokens = sequence.to_vec();
        let truth = tokens[start..end].to_vec();
        for t in &mut tokens[start..end] {
            *t = vocab.mask_id();
        }
        Ok((Self::new(vocab, tokens, start, end)?, truth))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn gap_len(&self) -> usize {
        self.end - self.start
    }

    pub fn gap(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    /// The full sequence with `span` written into the gap.
    pub fn complete(&self, span: &[TokenId]) -> Vec<TokenId> {
        assert_eq!(span.len(), self.gap_len(), "span length must equal gap length");
        let mut out = self.tokens.clone();
        out[self.start..self.end].copy_from_slice(span);
        out
    }
}

/// A partial infill: gap positions filled so far, in fill order, with the
/// per-step scores that make up its cumulative score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    filled: BTreeMap<usize, TokenId>,
    fill_order: Vec<usize>,
    step_scores: Vec<f64>,
    score: f64,
}

impl Default for Hypothesis {
    fn default() -> Self {
        Self::empty()
    }
}

impl Hypothesis {
    pub fn empty() -> Self {
        Self {
            filled: BTreeMap::new(),
            fill_order: Vec::new(),
            step_scores: Vec::new(),
            score: 0.0,
        }
    }

    /// A copy of `self` with `position` filled by `token`.
    pub fn extend(&self, position: usize, token: TokenId, step_score: f64) -> Self {
        debug_assert!(!self.filled.contains_key(&position));
        let mut next = self.clone();
        next.filled.insert(position, token);
        next.fill_order.push(position);
        next.step_scores.push(step_score);
        next.score += step_score;
        next
    }

    pub fn filled(&self) -> &BTreeMap<usize, TokenId> {
        &self.filled
    }

    pub fn fill_order(&self) -> &[usize] {
        &self.fill_order
    }

    pub fn step_scores(&self) -> &[f64] {
        &self.step_scores
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    /// Sum of the recorded step scores, in fill order.
    pub fn recomputed_score(&self) -> f64 {
        self.step_scores.iter().sum()
    }

    pub fn unfilled(&self, task: &GapTask) -> Vec<usize> {
        task.gap().filter(|p| !self.filled.contains_key(p)).collect()
    }

    pub fn is_complete(&self, task: &GapTask) -> bool {
        self.filled.len() == task.gap_len()
    }

    /// Tokens currently assigned to the gap, in position order, with `None`
    /// for unfilled positions.
    pub fn partial_span(&self, task: &GapTask) -> Vec<Option<TokenId>> {
        task.gap().map(|p| self.filled.get(&p).copied()).collect()
    }

    /// The filled span, if every gap position is filled.
    pub fn span(&self, task: &GapTask) -> Option<Vec<TokenId>> {
        task.gap().map(|p| self.filled.get(&p).copied()).collect()
    }

    pub fn check_consistent(&self, task: &GapTask) -> Result<()> {
        if let Some((&p, _)) = self.filled.iter().find(|(p, _)| !task.gap().contains(*p)) {
            return Err(Error::InvalidTask(format!(
                "hypothesis fills position {p} outside gap {:?}",
                task.gap()
            )));
        }
        Ok(())
    }
}

/// The length-n sequence with `hyp`'s assignments substituted and every
/// still-unfilled gap position set to `filler`.
pub fn realize(vocab: &Vocab, task: &GapTask, hyp: &Hypothesis, filler: TokenId) -> Result<Vec<TokenId>> {
    vocab.check(filler)?;
    hyp.check_consistent(task)?;
    let mut out = task.tokens().to_vec();
    for p in task.gap() {
        out[p] = hyp.filled.get(&p).copied().unwrap_or(filler);
    }
    Ok(out)
}

/// Like [`realize`], but unfilled position `p` takes `pivot[p - start]`.
pub fn realize_pivot(vocab: &Vocab, task: &GapTask, hyp: &Hypothesis, pivot: &[TokenId]) -> Result<Vec<TokenId>> {
    if pivot.len() != task.gap_len() {
        return Err(Error::Config(format!(
            "pivot length {} does not match gap length {}",
            pivot.len(),
            task.gap_len()
        )));
    }
    for &t in pivot {
        vocab.check(t)?;
    }
    hyp.check_consistent(task)?;
    let mut out = task.tokens().to_vec();
    for (offset, p) in task.gap().enumerate() {
        out[p] = hyp.filled.get(&p).copied().unwrap_or(pivot[offset]);
    }
    Ok(out)
}
