use hcb_core::backend::{ConditionalBackend, ExactMarginalModel, JointTable, PerturbedModel};
use hcb_core::oracle::{ci_residual, enumerate_gap};
use hcb_core::rng::rng_for;
use hcb_core::search::{infill_beam_search, BeamConfig, OrderPolicy};
use hcb_core::{GapTask, ScoringMode};
use rand::Rng;

fn case(seed: u64, gap: usize) -> (ExactMarginalModel, GapTask) {
    let mut rng = rng_for(&[seed, 0x9a9]);
    let a = rng.random_range(2..=3usize);
    let n = gap + rng.random_range(1..=2usize);
    let joint = JointTable::random(a, n, 1.0, &mut rng).unwrap();
    let seq = joint.sample_corpus(1, &mut rng).remove(0);
    let start = rng.random_range(0..=n - gap);
    let model = ExactMarginalModel::new(joint);
    let (task, _) = GapTask::mask_span(model.vocab(), &seq, start, start + gap).unwrap();
    (model, task)
}

fn modes(gap: usize) -> Vec<ScoringMode> {
    vec![
        ScoringMode::Standard,
        ScoringMode::HcbMask,
        ScoringMode::pivot(vec![0; gap]),
    ]
}

fn top_scores(backend: &dyn ConditionalBackend, task: &GapTask, mode: &ScoringMode, order: OrderPolicy) -> Vec<f64> {
    [1, 2, 4, 8]
        .iter()
        .map(|&b| {
            infill_beam_search(backend, task, &BeamConfig::new(b, mode.clone(), order))
                .unwrap()
                .completions[0]
                .score
        })
        .collect()
}

#[test]
fn wider_beams_never_lose_on_two_position_gaps() {
    for seed in 0..150 {
        let gap = 1 + (seed % 2) as usize;
        let (model, task) = case(seed, gap);
        let perturbed = PerturbedModel::new(model.clone(), 1.5, seed).unwrap();
        for backend in [&model as &dyn ConditionalBackend, &perturbed] {
            for mode in modes(gap) {
                for order in [OrderPolicy::LeftToRight, OrderPolicy::BestToWorst] {
                    let tops = top_scores(backend, &task, &mode, order);
                    assert!(tops.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {tops:?}");
                }
            }
        }
    }
}

#[test]
fn wider_beams_can_lose_on_three_position_gaps() {
    // the wider beam keeps two siblings and evicts greedy's eventual winner
    let found = (0..500).any(|seed| {
        let (model, task) = case(seed, 3);
        let perturbed = PerturbedModel::new(model, 1.0, seed).unwrap();
        let tops = top_scores(&perturbed, &task, &ScoringMode::HcbMask, OrderPolicy::LeftToRight);
        tops.windows(2).any(|w| w[1] < w[0])
    });
    assert!(found);
}

#[test]
fn gap_of_one_ignores_the_order_policy() {
    for seed in 0..40 {
        let (model, task) = case(seed, 1);
        for mode in modes(1) {
            let run = |order| infill_beam_search(&model, &task, &BeamConfig::new(3, mode.clone(), order)).unwrap();
            let (ltr, b2w) = (run(OrderPolicy::LeftToRight), run(OrderPolicy::BestToWorst));
            assert_eq!(ltr.completions, b2w.completions);
            assert_eq!(b2w.probe_calls, 0);
        }
    }
}

#[test]
fn searches_are_deterministic() {
    let (model, task) = case(3, 3);
    let perturbed = PerturbedModel::new(model, 1.0, 3).unwrap();
    for mode in modes(3) {
        let cfg = BeamConfig::new(4, mode, OrderPolicy::BestToWorst);
        assert_eq!(
            infill_beam_search(&perturbed, &task, &cfg).unwrap(),
            infill_beam_search(&perturbed, &task, &cfg).unwrap()
        );
    }
}

#[test]
fn exact_standard_beam_finds_the_oracle_argmax() {
    for seed in 0..60 {
        let (model, task) = case(seed, 2);
        let oracle = enumerate_gap(model.joint(), &task).unwrap();
        let b = model.vocab().content_ids().len().pow(2);
        let out = infill_beam_search(
            &model,
            &task,
            &BeamConfig::new(b, ScoringMode::Standard, OrderPolicy::LeftToRight),
        )
        .unwrap();
        let spans: Vec<_> = oracle.iter().map(|(s, _)| s.clone()).collect();
        assert_eq!(out.spans(), spans);
    }
}

#[test]
fn perturbation_breaks_independence_only_under_masks() {
    let (model, task) = case(8, 2);
    let perturbed = PerturbedModel::new(model.clone(), 1.0, 8).unwrap();
    let fill = vec![0; task.gap_len()];
    let pairs = vec![(task.clone(), fill)];
    assert!(ci_residual(&model, &model, &pairs).unwrap().max_abs < 1e-9);
    assert!(ci_residual(&perturbed, &model, &pairs).unwrap().max_abs > 0.0);
    let full = task.complete(&vec![0; task.gap_len()]);
    for i in 0..full.len() {
        assert_eq!(
            perturbed.conditionals(&full, i).unwrap(),
            model.conditionals(&full, i).unwrap()
        );
    }
}
