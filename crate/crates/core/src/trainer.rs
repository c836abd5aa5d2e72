//! The optimization loop.
//!
//! Each step draws `prompts_per_step` prompts, samples a group per prompt from
//! the current policy, freezes the token weights for the chosen method, and
//! takes `inner_epochs` optimizer steps on the mean group loss. All
//! randomness is keyed by `(seed, step, prompt)`, so a run resumed from a
//! checkpoint replays the uninterrupted run exactly.
//!
//! Run directory layout:
//!
//! ```text
//! config.txt              resolved configuration
//! metrics.jsonl           one MetricsRecord per line
//! checkpoints/step_NNNNNN.ckpt
//! final.ckpt
//! eval.json               greedy pass@1 of the final policy
//! nonfinite_dump.json     only written when training aborts
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{CovScope, Method, TrainConfig};
use crate::cov_reweight::{
    clip_cov_weights_pooled, cw_grpo_weights_pooled, pooled_covariances, population_std, summarize,
};
use crate::diagnostics::{entropy_mc, predict_entropy_delta};
use crate::envs::{env_generate, env_verify, Prompt, TaskSpec};
use crate::error::{Error, Result};
use crate::grpo::{batch_loss_and_grad, mean_report, rollout_group, GroupRollout, LossReport};
use crate::optim::{optimizer_step, OptimizerState};
use crate::policy::{greedy_response, sample_response, snapshot, PolicyParams, Snapshot, Trajectory};
use crate::rng::{self, purpose};

/// Per-step scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub mean_reward: f64,
    /// Fraction of sampled responses with accuracy 1.
    pub pass_rate: f64,
    pub entropy_mc: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_kl: f64,
    pub sigma_cov: f64,
    pub max_abs_cov: f64,
    pub top1_cov_share: f64,
    pub min_norm_weight: f64,
    pub max_norm_weight: f64,
    /// `-learning_rate * mean(c)` over the step's tokens.
    pub predicted_dh: f64,
    /// Entropy of fresh rollouts after the update minus `entropy_mc`.
    pub measured_dh: f64,
}

impl MetricsRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.mean_reward,
            self.pass_rate,
            self.entropy_mc,
            self.loss,
            self.grad_norm,
            self.mean_kl,
            self.sigma_cov,
            self.max_abs_cov,
            self.top1_cov_share,
            self.min_norm_weight,
            self.max_norm_weight,
            self.predicted_dh,
            self.measured_dh,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Token weights for each group under `method`.
pub fn method_weights(
    method: Method,
    scope: CovScope,
    groups: &[GroupRollout],
    sigma_floor: f64,
) -> Result<Vec<Option<Vec<Vec<f64>>>>> {
    let pools: Vec<&[GroupRollout]> = match scope {
        CovScope::Group => groups.chunks(1).collect(),
        CovScope::Batch => vec![groups],
    };
    let mut out = Vec::with_capacity(groups.len());
    for pool in pools {
        match method {
            Method::Grpo => out.extend(pool.iter().map(|_| None)),
            Method::CwGrpo => out.extend(
                cw_grpo_weights_pooled(pool, sigma_floor)?
                    .into_iter()
                    .map(|s| Some(s.norm_weight)),
            ),
            Method::ClipCov(tau) => out.extend(clip_cov_weights_pooled(pool, tau)?.into_iter().map(Some)),
        }
    }
    Ok(out)
}

/// Covariances of every token in the batch, centered per the scope.
fn batch_covariances(scope: CovScope, groups: &[GroupRollout]) -> Vec<f64> {
    let covs = match scope {
        CovScope::Group => groups
            .iter()
            .flat_map(|g| pooled_covariances(std::slice::from_ref(g)))
            .collect(),
        CovScope::Batch => pooled_covariances(groups),
    };
    covs.into_iter().flat_map(|c| c.cov.into_iter().flatten()).collect()
}

pub struct Trainer {
    cfg: TrainConfig,
    params: PolicyParams,
    reference: Snapshot,
    optimizer: OptimizerState,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.init_policy()?;
        Ok(Self {
            reference: snapshot(&params, 0),
            optimizer: OptimizerState::new(cfg.optimizer, params.weights.len()),
            params,
            cfg: cfg.resolved(),
            step: 0,
        })
    }

    /// Continue from a checkpoint written by a run with the same config.
    pub fn from_checkpoint(cfg: &TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        let fresh = &t.params;
        if (fresh.vocab_size, fresh.context_len, fresh.feature_map)
            != (ckpt.params.vocab_size, ckpt.params.context_len, ckpt.params.feature_map)
        {
            return Err(Error::Checkpoint("checkpoint shape does not match config".into()));
        }
        if std::mem::discriminant(&t.optimizer) != std::mem::discriminant(&ckpt.optimizer) {
            return Err(Error::Checkpoint("checkpoint optimizer does not match config".into()));
        }
        t.params = ckpt.params;
        t.optimizer = ckpt.optimizer;
        t.step = ckpt.step as usize;
        Ok(t)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step as u64,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn step_prompts(&self) -> Result<Vec<Prompt>> {
        (0..self.cfg.prompts_per_step)
            .map(|p| env_generate(&self.cfg.task, rng::derive_seed(self.cfg.seed, &[purpose::PROMPT, self.step as u64, p as u64])))
            .collect()
    }

    pub fn rollouts(&self, prompts: &[Prompt], old: &Snapshot) -> Result<Vec<GroupRollout>> {
        let settings = self.cfg.rollout_settings();
        prompts
            .par_iter()
            .enumerate()
            .map(|(p, prompt)| {
                let mut r = rng::stream(self.cfg.seed, &[purpose::ROLLOUT, self.step as u64, p as u64]);
                rollout_group(
                    &self.params,
                    &self.cfg.task,
                    prompt,
                    self.cfg.group_size,
                    &settings,
                    &mut r,
                    old,
                    &self.reference,
                )
            })
            .collect()
    }

    /// Optimizer updates on a fixed batch with frozen token weights. Returns
    /// the first-epoch report.
    pub fn update(&mut self, groups: &[GroupRollout], weights: &[Option<Vec<Vec<f64>>>]) -> Result<LossReport> {
        let mut first = None;
        for _ in 0..self.cfg.inner_epochs {
            let reports = batch_loss_and_grad(&self.params, groups, self.cfg.loss_options(), weights)?;
            for (gi, r) in reports.iter().enumerate() {
                let what = if !r.loss.is_finite() {
                    Some("loss")
                } else if r.grad.iter().any(|g| !g.is_finite()) {
                    Some("gradient")
                } else {
                    None
                };
                if let Some(what) = what {
                    return Err(Error::NonFinite {
                        what,
                        step: self.step + 1,
                        group: gi,
                        dump: serde_json::to_string_pretty(&groups[gi]).unwrap_or_default(),
                    });
                }
            }
            let mean = mean_report(&reports);
            optimizer_step(&mut self.params, &mean.grad, &mut self.optimizer, self.cfg.learning_rate)?;
            first.get_or_insert(mean);
        }
        Ok(first.expect("inner_epochs >= 1"))
    }

    /// One full training step.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let prompts = self.step_prompts()?;
        let old = snapshot(&self.params, self.step);
        let groups = self.rollouts(&prompts, &old)?;
        let weights = method_weights(self.cfg.method, self.cfg.cov_scope, &groups, self.cfg.sigma_floor)?;

        let cov = batch_covariances(self.cfg.cov_scope, &groups);
        let applied: Vec<f64> = groups
            .iter()
            .zip(&weights)
            .flat_map(|(g, w)| match w {
                Some(w) => w.iter().flatten().copied().collect::<Vec<_>>(),
                None => vec![1.0; g.total_tokens],
            })
            .collect();
        let summary = summarize(&cov, population_std(&cov), &applied);

        let before: Vec<Trajectory> = groups.iter().flat_map(|g| g.trajectories.iter().cloned()).collect();
        let entropy_before = entropy_mc(&before)?.value;
        let n_resp = groups.iter().map(GroupRollout::group_size).sum::<usize>() as f64;
        let mean_reward = groups.iter().flat_map(|g| &g.rewards).sum::<f64>() / n_resp;
        let pass_rate = groups.iter().flat_map(|g| &g.breakdowns).map(|b| b.accuracy).sum::<f64>() / n_resp;

        let report = self.update(&groups, &weights)?;
        self.step += 1;

        let entropy_after = self.probe_entropy(&prompts)?;
        let record = MetricsRecord {
            step: self.step,
            mean_reward,
            pass_rate,
            entropy_mc: entropy_before,
            loss: report.loss,
            grad_norm: report.grad_norm(),
            mean_kl: report.mean_kl,
            sigma_cov: summary.sigma,
            max_abs_cov: summary.max_abs_cov,
            top1_cov_share: summary.top1_share,
            min_norm_weight: summary.min_norm_weight,
            max_norm_weight: summary.max_norm_weight,
            predicted_dh: predict_entropy_delta(self.cfg.learning_rate, &cov),
            measured_dh: entropy_after - entropy_before,
        };
        Ok(record)
    }

    /// Monte-Carlo entropy of fresh rollouts of the current policy.
    fn probe_entropy(&self, prompts: &[Prompt]) -> Result<f64> {
        let settings = self.cfg.rollout_settings();
        let trajs: Vec<Trajectory> = prompts
            .par_iter()
            .enumerate()
            .flat_map_iter(|(p, prompt)| {
                let mut r = rng::stream(self.cfg.seed, &[purpose::PROBE, self.step as u64, p as u64]);
                (0..self.cfg.group_size)
                    .map(|_| sample_response(&self.params, prompt, settings.max_len, settings.temperature, &mut r))
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(entropy_mc(&trajs)?.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pass_at_1: f64,
    pub mean_reward: f64,
    pub n_prompts: usize,
}

/// Greedy-decoding pass@1 and mean reward over `n_prompts` fresh prompts.
pub fn evaluate(
    params: &PolicyParams,
    task: &TaskSpec,
    n_prompts: usize,
    max_len: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_prompts == 0 {
        return Err(Error::Contract("n_prompts >= 1 required".into()));
    }
    if params.vocab_size != task.vocab_size {
        return Err(Error::Config(format!(
            "policy vocab {} does not match task vocab {}",
            params.vocab_size, task.vocab_size
        )));
    }
    let scores = (0..n_prompts)
        .into_par_iter()
        .map(|i| {
            let prompt = env_generate(task, rng::derive_seed(seed, &[purpose::EVAL, i as u64]))?;
            let mut r = rng::stream(seed, &[purpose::EVAL, i as u64, 1]);
            let response = greedy_response(params, &prompt, max_len, &mut r);
            Ok(env_verify(task, &prompt, &response))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = n_prompts as f64;
    Ok(EvalReport {
        pass_at_1: scores.iter().map(|s| s.accuracy).sum::<f64>() / n,
        mean_reward: scores.iter().map(|s| s.total).sum::<f64>() / n,
        n_prompts,
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub eval: EvalReport,
    pub final_checkpoint: PathBuf,
}

/// Train from scratch into `out_dir`.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<RunSummary> {
    run(Trainer::new(cfg)?, out_dir)
}

/// Continue a run from `ckpt` up to `cfg.steps`, writing into `out_dir`.
pub fn resume(cfg: &TrainConfig, ckpt: Checkpoint, out_dir: &Path) -> Result<RunSummary> {
    run(Trainer::from_checkpoint(cfg, ckpt)?, out_dir)
}

pub fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

fn run(mut trainer: Trainer, out_dir: &Path) -> Result<RunSummary> {
    let cfg = trainer.config().clone();
    fs::create_dir_all(out_dir.join("checkpoints"))?;
    fs::write(out_dir.join("config.txt"), cfg.to_config_string())?;
    let mut log = BufWriter::new(File::create(out_dir.join("metrics.jsonl"))?);
    let mut records = Vec::new();

    while trainer.steps_done() < cfg.steps {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(Error::NonFinite { what, step, group, dump }) => {
                fs::write(out_dir.join("nonfinite_dump.json"), &dump)?;
                return Err(Error::NonFinite { what, step, group, dump });
            }
            Err(e) => return Err(e),
        };
        serde_json::to_writer(&mut log, &record).map_err(std::io::Error::from)?;
        log.write_all(b"\n")?;
        let step = record.step;
        records.push(record);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            trainer.checkpoint().save(&checkpoint_path(out_dir, step))?;
        }
    }
    log.flush()?;

    let final_checkpoint = out_dir.join("final.ckpt");
    trainer.checkpoint().save(&final_checkpoint)?;
    let eval = evaluate(
        trainer.params(),
        &cfg.task,
        cfg.eval_prompts.max(1),
        cfg.max_completion_len(),
        rng::derive_seed(cfg.seed, &[purpose::EVAL]),
    )?;
    fs::write(
        out_dir.join("eval.json"),
        serde_json::to_string_pretty(&eval).map_err(std::io::Error::from)?,
    )?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        records,
        eval,
        final_checkpoint,
    })
}

/// Read a metrics log, reporting the first bad line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(line).map_err(|e| Error::Log {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Log {
            path: path.to_path_buf(),
            line: 0,
            msg: "metrics log is empty".into(),
        });
    }
    Ok(out)
}
