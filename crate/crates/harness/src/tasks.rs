//! Gap-task generation.

use hcb_core::rng::rng_for;
use hcb_core::{Error, GapTask, Result, TokenId, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

const ORDER_STREAM: u64 = 0x6f72_6465;
const SPAN_STREAM: u64 = 0x7370_616e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillTask {
    pub id: usize,
    /// Index of the source example in the dataset.
    pub example: usize,
    pub task: GapTask,
    pub truth: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub tasks: Vec<InfillTask>,
    /// Examples excluded because they are too short or have no valid span.
    pub skipped: usize,
}

/// Starts of length-`k` windows that contain only content tokens.
fn valid_starts(vocab: &Vocab, seq: &[TokenId], k: usize) -> Vec<usize> {
    if seq.len() < k + 1 {
        return Vec::new();
    }
    (0..=seq.len() - k)
        .filter(|&s| seq[s..s + k].iter().all(|&t| !vocab.is_special(t)))
        .collect()
}

/// Picks `num_examples` examples (without replacement while possible, then
/// cycling through fresh shuffles) and masks a uniformly random contiguous
/// span of length `k` in each. Spans may touch either boundary.
pub fn generate_tasks(
    vocab: &Vocab,
    dataset: &[Vec<TokenId>],
    k: usize,
    num_examples: usize,
    seed: u64,
) -> Result<TaskSet> {
    if k == 0 {
        return Err(Error::Config("gap length must be at least 1".into()));
    }
    for seq in dataset {
        seq.iter().try_for_each(|&t| vocab.check(t))?;
        if seq.contains(&vocab.mask_id()) {
            return Err(Error::InvalidInput("dataset example already contains a mask".into()));
        }
    }
    let starts: Vec<Vec<usize>> = dataset.iter().map(|s| valid_starts(vocab, s, k)).collect();
    let eligible: Vec<usize> = (0..dataset.len()).filter(|&i| !starts[i].is_empty()).collect();
    let skipped = dataset.len() - eligible.len();
    if eligible.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no example is long enough for a gap of {k}"
        )));
    }

    let mut tasks = Vec::with_capacity(num_examples);
    let mut pass = 0u64;
    while tasks.len() < num_examples {
        let mut order = eligible.clone();
        order.shuffle(&mut rng_for(&[seed, ORDER_STREAM, pass]));
        for example in order.into_iter().take(num_examples - tasks.len()) {
            let id = tasks.len();
            let choices = &starts[example];
            let start = choices[rng_for(&[seed, SPAN_STREAM, id as u64]).random_range(0..choices.len())];
            let (task, truth) = GapTask::mask_span(vocab, &dataset[example], start, start + k)?;
            tasks.push(InfillTask {
                id,
                example,
                task,
                truth,
            });
        }
        pass += 1;
    }
    Ok(TaskSet { tasks, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_gap_has_two_starts() {
        let vocab = Vocab::synthetic(3);
        let data = vec![vec![0, 1, 2, 0]];
        let set = generate_tasks(&vocab, &data, 3, 50, 1).unwrap();
        assert!(set.tasks.iter().all(|t| t.task.start() <= 1));
        assert!(set.tasks.iter().any(|t| t.task.start() == 0));
        assert!(set.tasks.iter().any(|t| t.task.start() == 1));
    }

    #[test]
    fn short_examples_are_skipped() {
        let vocab = Vocab::synthetic(3);
        let data = vec![vec![0, 1], vec![0, 1, 2], vec![1]];
        let set = generate_tasks(&vocab, &data, 2, 4, 1).unwrap();
        assert_eq!(set.skipped, 2);
        assert!(set.tasks.iter().all(|t| t.example == 1));
        assert!(generate_tasks(&vocab, &[vec![0, 1]], 2, 1, 1).is_err());
    }

    #[test]
    fn tasks_are_seeded() {
        let vocab = Vocab::synthetic(4);
        let data: Vec<Vec<TokenId>> = (0..20).map(|i| vec![i % 4, 1, 2, 3, 0, (i / 4) % 4]).collect();
        let a = generate_tasks(&vocab, &data, 2, 30, 9).unwrap();
        assert_eq!(a, generate_tasks(&vocab, &data, 2, 30, 9).unwrap());
        assert_ne!(a, generate_tasks(&vocab, &data, 2, 30, 10).unwrap());
        // the first pass uses each example once
        let mut first: Vec<usize> = a.tasks[..20].iter().map(|t| t.example).collect();
        first.sort();
        assert_eq!(first, (0..20).collect::<Vec<_>>());
        for t in &a.tasks {
            assert_eq!(t.task.complete(&t.truth), data[t.example]);
        }
    }

    #[test]
    fn spans_avoid_special_tokens() {
        let vocab = Vocab::opaque(6, 5, [4, 5]).unwrap();
        let data = vec![vec![4, 0, 1, 2, 4]];
        let set = generate_tasks(&vocab, &data, 2, 40, 3).unwrap();
        assert!(set.tasks.iter().all(|t| (1..=2).contains(&t.task.start())));
    }
}
