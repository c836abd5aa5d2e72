//! Sample from a random policy at several temperatures and check that the
//! recorded log-probabilities match a fresh evaluation.

use cwgrpo::policy::{greedy_response, logprob_trajectory, sample_response, step_probs};
use cwgrpo::rng;
use cwgrpo::{env_generate, FeatureMap, PolicyParams, TaskSpec};

fn main() -> cwgrpo::Result<()> {
    let spec = TaskSpec::default();
    let params = PolicyParams::init(spec.vocab_size, spec.prompt_len + 1, FeatureMap::Hybrid, 1.0, 3)?;
    let prompt = env_generate(&spec, 0)?;
    println!("prompt {:?}", prompt.tokens);
    println!("first-step probabilities at T=1: {:.3?}", step_probs(&params, &prompt.tokens, 1.0));

    for temperature in [0.3, 0.7, 1.5] {
        let mut r = rng::stream(1, &[]);
        println!("T = {temperature}");
        for _ in 0..3 {
            let t = sample_response(&params, &prompt, 6, temperature, &mut r);
            let again = logprob_trajectory(&params, &t.prompt_tokens, &t.response_tokens);
            assert_eq!(again, t.logp_cur);
            println!("  {:?} logp {:.3?} terminated {}", t.response_tokens, t.logp_cur, t.terminated);
        }
    }
    let greedy = greedy_response(&params, &prompt, 6, &mut rng::stream(2, &[]));
    println!("greedy {greedy:?}");
    Ok(())
}
