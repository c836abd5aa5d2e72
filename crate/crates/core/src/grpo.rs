//! Group rollouts, group-relative advantages and the token-level GRPO loss.
//!
//! The loss is minimized, so it is the negated objective:
//!
//! ```text
//! loss = -(1/G) sum_i (1/|o_i|) sum_t [ ratio_it * (w_it * A_i) - beta * KL_it ]
//! ```
//!
//! with `ratio_it = exp(logp_cur - logp_old)` and the k3 estimator
//! `KL_it = r - ln r - 1`, `r = pi_ref / pi_cur`. Advantages, token weights,
//! `logp_old` and `logp_ref` are constants for differentiation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{env_verify, Prompt, RewardBreakdown, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{
    evaluate_steps, logprob_trajectory, sample_response, PolicyParams, Snapshot, TokenGrad, Trajectory,
};
use crate::rng::Rng;

/// Default degenerate-group cutoff for the reward standard deviation.
pub const ADV_EPS: f64 = 1e-8;

/// G responses to one prompt, scored and standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub prompt: Prompt,
    pub trajectories: Vec<Trajectory>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub total_tokens: usize,
}

impl GroupRollout {
    /// Assemble a group from already-sampled trajectories.
    pub fn from_trajectories(
        task: &TaskSpec,
        prompt: Prompt,
        trajectories: Vec<Trajectory>,
        adv_eps: f64,
    ) -> Result<Self> {
        if trajectories.len() < 2 {
            return Err(Error::Contract(format!("group size >= 2 required, got {}", trajectories.len())));
        }
        if trajectories.iter().any(Trajectory::is_empty) {
            return Err(Error::Contract("every response needs at least one token".into()));
        }
        let breakdowns: Vec<RewardBreakdown> = trajectories
            .iter()
            .map(|t| env_verify(task, &prompt, &t.response_tokens))
            .collect();
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let advantages = compute_advantages(&rewards, adv_eps);
        let total_tokens = trajectories.iter().map(Trajectory::len).sum();
        Ok(Self {
            prompt,
            trajectories,
            breakdowns,
            rewards,
            advantages,
            total_tokens,
        })
    }

    pub fn group_size(&self) -> usize {
        self.trajectories.len()
    }

    /// Shape of per-token quantities: one row per response.
    pub fn lengths(&self) -> Vec<usize> {
        self.trajectories.iter().map(Trajectory::len).collect()
    }

    pub fn pass_rate(&self) -> f64 {
        self.breakdowns.iter().map(|b| b.accuracy).sum::<f64>() / self.group_size() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSettings {
    pub max_len: usize,
    pub temperature: f64,
    pub adv_eps: f64,
}

/// Sample `g` responses from `params` and fill old/reference log-probs from
/// the snapshots.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    params: &PolicyParams,
    task: &TaskSpec,
    prompt: &Prompt,
    g: usize,
    settings: &RolloutSettings,
    rng: &mut Rng,
    old: &Snapshot,
    reference: &Snapshot,
) -> Result<GroupRollout> {
    if g < 2 {
        return Err(Error::Contract(format!("group size >= 2 required, got {g}")));
    }
    if settings.max_len == 0 {
        return Err(Error::Contract("max_len >= 1 required".into()));
    }
    let on_policy = old.params() == params;
    let trajectories = (0..g)
        .map(|_| {
            let mut t = sample_response(params, prompt, settings.max_len, settings.temperature, rng);
            if !on_policy {
                t.logp_old = logprob_trajectory(old.params(), &t.prompt_tokens, &t.response_tokens);
            }
            t.logp_ref = logprob_trajectory(reference.params(), &t.prompt_tokens, &t.response_tokens);
            t
        })
        .collect();
    GroupRollout::from_trajectories(task, prompt.clone(), trajectories, settings.adv_eps)
}

/// `(r_i - mean) / std` with the population standard deviation; all zeros
/// when the standard deviation is below `eps`.
pub fn compute_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= eps) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Per-token k3 estimate of `KL(pi_cur || pi_ref)`.
pub fn token_kl(logp_cur: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_cur;
    (d.exp_m1() - d).max(0.0)
}

/// `d token_kl / d logp_cur`.
fn token_kl_slope(logp_cur: f64, logp_ref: f64) -> f64 {
    -(logp_ref - logp_cur).exp_m1()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Same layout as [`PolicyParams::weights`].
    pub grad: Vec<f64>,
    /// Token average.
    pub mean_kl: f64,
    /// Token average.
    pub mean_ratio: f64,
}

impl LossReport {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossOptions {
    pub beta: f64,
    /// PPO-style ratio clip range; `None` leaves the objective unclipped.
    pub ratio_clip: Option<f64>,
}

/// Vanilla GRPO when `token_weights` is `None`, reweighted otherwise.
pub fn grpo_loss_and_grad(
    params: &PolicyParams,
    group: &GroupRollout,
    beta: f64,
    token_weights: Option<&[Vec<f64>]>,
) -> Result<LossReport> {
    grpo_loss_and_grad_with(params, group, LossOptions { beta, ratio_clip: None }, token_weights)
}

pub fn grpo_loss_and_grad_with(
    params: &PolicyParams,
    group: &GroupRollout,
    opts: LossOptions,
    token_weights: Option<&[Vec<f64>]>,
) -> Result<LossReport> {
    if let Some(w) = token_weights {
        check_shape(group, w)?;
    }
    let g = group.group_size() as f64;
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut grad = vec![0.0; params.weights.len()];

    for (i, traj) in group.trajectories.iter().enumerate() {
        let steps = evaluate_steps(params, &traj.prompt_tokens, &traj.response_tokens);
        let scale = 1.0 / (g * traj.len() as f64);
        let mut seq = 0.0;
        for (t, step) in steps.iter().enumerate() {
            let logp = step.logp();
            let w = token_weights.map_or(1.0, |w| w[i][t]);
            let adv = w * group.advantages[i];
            let ratio = (logp - traj.logp_old[t]).exp();
            let kl = token_kl(logp, traj.logp_ref[t]);

            let (surrogate, surrogate_slope) = match opts.ratio_clip {
                Some(eps) => {
                    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                    let unclipped = ratio * adv;
                    if clipped < unclipped {
                        (clipped, 0.0)
                    } else {
                        (unclipped, ratio * adv)
                    }
                }
                None => (ratio * adv, ratio * adv),
            };
            seq += surrogate - opts.beta * kl;
            kl_sum += kl;
            ratio_sum += ratio;

            // d loss / d logp_cur for this token
            let coef = -scale * (surrogate_slope - opts.beta * token_kl_slope(logp, traj.logp_ref[t]));
            if coef != 0.0 {
                TokenGrad::from_step(step).accumulate(coef, &mut grad);
            }
        }
        loss -= seq / traj.len() as f64;
    }
    let n = group.total_tokens as f64;
    Ok(LossReport {
        loss: loss / g,
        grad,
        mean_kl: kl_sum / n,
        mean_ratio: ratio_sum / n,
    })
}

fn check_shape(group: &GroupRollout, w: &[Vec<f64>]) -> Result<()> {
    let ok = w.len() == group.group_size()
        && w.iter().zip(&group.trajectories).all(|(row, t)| row.len() == t.len());
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "token weight shape {:?} does not match group lengths {:?}",
            w.iter().map(Vec::len).collect::<Vec<_>>(),
            group.lengths()
        )))
    }
}

/// Mean of per-group reports. Groups are evaluated in parallel and reduced in
/// index order, so the result does not depend on the thread count.
pub fn batch_loss_and_grad(
    params: &PolicyParams,
    groups: &[GroupRollout],
    opts: LossOptions,
    token_weights: &[Option<Vec<Vec<f64>>>],
) -> Result<Vec<LossReport>> {
    if token_weights.len() != groups.len() {
        return Err(Error::Contract("one token-weight entry per group required".into()));
    }
    groups
        .par_iter()
        .zip(token_weights)
        .map(|(g, w)| grpo_loss_and_grad_with(params, g, opts, w.as_deref()))
        .collect()
}

/// Average a batch of per-group reports in order.
pub fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut grad = vec![0.0; reports.first().map_or(0, |r| r.grad.len())];
    for r in reports {
        for (a, b) in grad.iter_mut().zip(&r.grad) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    LossReport {
        loss: reports.iter().map(|r| r.loss).sum::<f64>() / n,
        grad,
        mean_kl: reports.iter().map(|r| r.mean_kl).sum::<f64>() / n,
        mean_ratio: reports.iter().map(|r| r.mean_ratio).sum::<f64>() / n,
    }
}
