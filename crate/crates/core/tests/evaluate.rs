use cwgrpo::envs::{TaskKind, TaskSpec};
use cwgrpo::policy::{FeatureMap, PolicyParams};
use cwgrpo::trainer::evaluate;
use cwgrpo::Token;

/// Chance that uniform decoding emits `j` scratch tokens, the marker, the
/// exact answer and EOS within `max_len` tokens.
fn uniform_pass_rate(spec: &TaskSpec, max_len: usize) -> f64 {
    let v = spec.vocab_size as f64;
    let fixed = spec.answer_len + 2;
    (0..=max_len.saturating_sub(fixed))
        .map(|j| ((v - 2.0) / v).powi(j as i32) * (1.0 / v).powi(fixed as i32))
        .sum()
}

#[test]
fn uniform_policy_scores_at_chance() {
    for (spec, max_len) in [
        (TaskSpec::default(), 4),
        (TaskSpec::default(), 6),
        (
            TaskSpec {
                kind: TaskKind::ModSum,
                vocab_size: 5,
                prompt_len: 3,
                answer_len: 1,
                modulus: 3,
            },
            5,
        ),
    ] {
        let params = PolicyParams::zeros(spec.vocab_size, spec.prompt_len + 1, FeatureMap::OneHotLastK).unwrap();
        let n = 40_000;
        let report = evaluate(&params, &spec, n, max_len, 5).unwrap();
        let p = uniform_pass_rate(&spec, max_len);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (report.pass_at_1 - p).abs() <= 3.0 * se,
            "{spec:?} max_len {max_len}: {} vs chance {p}",
            report.pass_at_1
        );
    }
}

#[test]
fn hand_built_parity_policy_is_perfect() {
    let spec = TaskSpec::default();
    let k = spec.prompt_len + 1;
    let v = spec.vocab_size;
    let mut params = PolicyParams::zeros(v, k, FeatureMap::TupleLastK).unwrap();
    let mut features = Vec::new();
    for bits in 0..(1u32 << spec.prompt_len) {
        let prompt: Vec<Token> = (0..spec.prompt_len).map(|i| (bits >> i) & 1).collect();
        let mut context = prompt.clone();
        let response = spec.encode(&spec.target_for(&prompt));
        for &tok in &response {
            params.active_features(&context, &mut features);
            for &f in &features {
                params.weights[f * v + tok as usize] = 20.0;
            }
            context.push(tok);
        }
    }
    let report = evaluate(&params, &spec, 300, spec.answer_len + 3, 1).unwrap();
    assert_eq!(report.pass_at_1, 1.0);
    assert_eq!(report.mean_reward, 2.0);
}

#[test]
fn evaluation_is_deterministic_per_seed() {
    let spec = TaskSpec::default();
    // zero weights: every greedy choice is a tie broken by the seed
    let params = PolicyParams::zeros(spec.vocab_size, 5, FeatureMap::Hybrid).unwrap();
    let a = evaluate(&params, &spec, 2000, 6, 8).unwrap();
    let b = evaluate(&params, &spec, 2000, 6, 8).unwrap();
    assert_eq!(a, b);
    let c = evaluate(&params, &spec, 2000, 6, 9).unwrap();
    assert_ne!(a.mean_reward, c.mean_reward);
}

#[test]
fn evaluation_rejects_bad_inputs() {
    let spec = TaskSpec::default();
    let params = PolicyParams::zeros(7, 5, FeatureMap::OneHotLastK).unwrap();
    assert!(evaluate(&params, &spec, 10, 4, 0).is_err());
    let params = PolicyParams::zeros(6, 5, FeatureMap::OneHotLastK).unwrap();
    assert!(evaluate(&params, &spec, 0, 4, 0).is_err());
}
