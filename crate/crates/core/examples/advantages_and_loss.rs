//! Roll out one group, print rewards and advantages, then compare the plain
//! and covariance-weighted losses.

use cwgrpo::cov_reweight::cw_grpo_weights;
use cwgrpo::grpo::RolloutSettings;
use cwgrpo::policy::snapshot;
use cwgrpo::rng;
use cwgrpo::{env_generate, grpo_loss_and_grad, rollout_group, FeatureMap, PolicyParams, TaskSpec};

fn main() -> cwgrpo::Result<()> {
    let spec = TaskSpec::default();
    let params = PolicyParams::init(spec.vocab_size, spec.prompt_len + 1, FeatureMap::Hybrid, 1.0, 7)?;
    let reference = snapshot(&PolicyParams::init(spec.vocab_size, spec.prompt_len + 1, FeatureMap::Hybrid, 1.0, 8)?, 0);
    let prompt = env_generate(&spec, 5)?;
    let settings = RolloutSettings {
        max_len: 4,
        temperature: 1.0,
        adv_eps: 1e-8,
    };
    let group = rollout_group(
        &params,
        &spec,
        &prompt,
        12,
        &settings,
        &mut rng::stream(0, &[]),
        &snapshot(&params, 0),
        &reference,
    )?;
    for ((t, r), a) in group.trajectories.iter().zip(&group.rewards).zip(&group.advantages) {
        println!("{:<16} reward {r} advantage {a:+.3}", format!("{:?}", t.response_tokens));
    }

    let stats = cw_grpo_weights(&group, 1e-12)?;
    for beta in [0.0, 0.04] {
        let plain = grpo_loss_and_grad(&params, &group, beta, None)?;
        let cw = grpo_loss_and_grad(&params, &group, beta, Some(&stats.norm_weight))?;
        println!(
            "beta {beta}: GRPO loss {:.5} |grad| {:.5}  CW-GRPO loss {:.5} |grad| {:.5}  mean KL {:.5}",
            plain.loss,
            plain.grad_norm(),
            cw.loss,
            cw.grad_norm(),
            plain.mean_kl
        );
    }
    Ok(())
}
