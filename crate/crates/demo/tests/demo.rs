use hcb_demo::{compare_beams, compare_beams_json, residual_curve_json, sampler_transform, sampler_transform_json};
use serde_json::Value;

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn beams_on_the_exact_model_reach_the_oracle_argmax() {
    // delta 0 leaves the exact model, where every mode ranks like the oracle
    let out = compare_beams_json(3, 4, 7, 1.0, 0.0, "", 1, 2, 9, "ltr").unwrap();
    let best = &out["oracle"][0]["span"];
    let methods = out["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        assert_eq!(&m["completions"][0]["span"], best, "{}", m["mode"]);
    }
    let masked: Vec<u64> = out["masked"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(&masked[1..3], &[3, 3]);
    let seq = out["sequence"].as_array().unwrap();
    assert_eq!(seq[0].as_u64().unwrap(), masked[0]);
    assert_eq!(&out["truth"].as_array().unwrap()[..], &seq[1..3]);
}

#[test]
fn oracle_probabilities_sum_to_one_when_fully_listed() {
    let out = compare_beams_json(2, 4, 3, 1.0, 0.5, "0 1 1 0", 1, 2, 4, "b2w").unwrap();
    let total: f64 = out["oracle"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["logp"].as_f64().unwrap().exp())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn bad_inputs_come_back_as_errors() {
    assert!(compare_beams_json(3, 4, 1, 1.0, 0.0, "0 1", 0, 1, 2, "ltr").is_err());
    assert!(compare_beams_json(3, 4, 1, 1.0, 0.0, "", 0, 1, 2, "sideways").is_err());
    assert!(compare_beams_json(4, 12, 1, 1.0, 0.0, "", 0, 1, 2, "ltr").is_err());
    let text: Value = serde_json::from_str(&compare_beams(3, 4, 1, 1.0, 0.0, "x", 0, 1, 2, "ltr")).unwrap();
    assert!(text["error"].as_str().unwrap().contains("token id"));
    assert!(residual_curve_json(3, 4, 1, "0 a", 2, 5, 2).is_err());
    assert!(sampler_transform_json("0 1", "nucleus", 1.5).is_err());
}

#[test]
fn zero_perturbation_has_no_residual() {
    let out = residual_curve_json(3, 4, 11, "0, 1, 2", 2, 20, 9).unwrap();
    let rows = out["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0]["mean_kl"].as_f64().unwrap() < 1e-12);
    assert!(rows[0]["pivot_spread"].as_f64().unwrap() < 1e-9);
    assert_eq!(rows[0]["pivot_top1"].as_f64().unwrap(), 1.0);
    for r in &rows[1..] {
        assert!(r["mean_kl"].as_f64().unwrap() > 1e-6);
        assert!(r["pivot_spread"].as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn sampler_transforms_match_hand_computation() {
    let scores = format!("0 {}", 3f64.ln());
    let pure = sampler_transform_json(&scores, "pure", 0.0).unwrap();
    let before = floats(&pure["before"]);
    assert!((before[0] - 0.25).abs() < 1e-12 && (before[1] - 0.75).abs() < 1e-12);
    assert_eq!(pure["before"], pure["after"]);

    let hot = sampler_transform_json(&scores, "temperature", 2.0).unwrap();
    let after = floats(&hot["after"]);
    let r3 = 3f64.sqrt();
    assert!((after[0] - 1.0 / (1.0 + r3)).abs() < 1e-12);
    assert!((after[1] - r3 / (1.0 + r3)).abs() < 1e-12);

    let nucleus: Value = serde_json::from_str(&sampler_transform(&scores, "nucleus", 0.7)).unwrap();
    assert_eq!(floats(&nucleus["after"]), vec![0.0, 1.0]);
}
