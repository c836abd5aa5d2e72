//! Token covariances and their Gaussian-kernel weights for one group, with
//! the clipping baseline alongside.

use rand::Rng as _;

use cwgrpo::cov_reweight::{clip_cov_weights, cw_grpo_weights};
use cwgrpo::grpo::RolloutSettings;
use cwgrpo::policy::snapshot;
use cwgrpo::rng;
use cwgrpo::{env_generate, rollout_group, FeatureMap, PolicyParams, TaskSpec};

#[allow(clippy::needless_range_loop)]
fn main() -> cwgrpo::Result<()> {
    let spec = TaskSpec::default();
    let params = PolicyParams::init(spec.vocab_size, spec.prompt_len + 1, FeatureMap::Hybrid, 1.5, 11)?;
    let frozen = snapshot(&params, 0);
    let settings = RolloutSettings {
        max_len: 4,
        temperature: 1.0,
        adv_eps: 1e-8,
    };
    let mut r = rng::stream(3, &[]);
    // find a group with some reward spread
    let group = loop {
        let prompt = env_generate(&spec, r.gen())?;
        let g = rollout_group(&params, &spec, &prompt, 8, &settings, &mut r, &frozen, &frozen)?;
        if g.advantages.iter().any(|a| *a != 0.0) {
            break g;
        }
    };
    let stats = cw_grpo_weights(&group, 1e-12)?;
    let clipped = clip_cov_weights(&group, 2.0)?;
    println!("sigma {:.4}  mean logp {:.4}  token-weighted mean A {:.4}", stats.sigma, stats.logp_mean, stats.adv_mean);
    println!("{:>4} {:>4} {:>9} {:>9} {:>8} {:>8} {:>5}", "resp", "tok", "logp", "c", "w", "w~", "clip");
    for (i, t) in group.trajectories.iter().enumerate() {
        for j in 0..t.len() {
            println!(
                "{i:>4} {:>4} {:>9.4} {:>9.4} {:>8.4} {:>8.4} {:>5}",
                t.response_tokens[j], t.logp_cur[j], stats.cov[i][j], stats.weight[i][j], stats.norm_weight[i][j], clipped[i][j]
            );
        }
    }
    let s = stats.summary();
    println!(
        "max |c| {:.4}, top-1% share {:.3}, w~ range [{:.4}, {:.4}], sum w~ {:.6} over {} tokens",
        s.max_abs_cov,
        s.top1_share,
        s.min_norm_weight,
        s.max_norm_weight,
        stats.norm_weight.iter().flatten().sum::<f64>(),
        group.total_tokens
    );
    Ok(())
}
