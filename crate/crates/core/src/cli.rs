//! Command-line verbs: `train`, `eval`, `diagnose`, `plot`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_config, TrainConfig};
use crate::cov_reweight::token_covariances;
use crate::diagnostics::CovReport;
use crate::envs::env_generate;
use crate::error::{Error, Result};
use crate::grpo::rollout_group;
use crate::plot::{cmd_plot, PlotKind};
use crate::policy::{snapshot, PolicyParams};
use crate::rng::{self, purpose};
use crate::trainer::{evaluate, resume, train};

#[derive(Debug, Parser)]
#[command(name = "cwgrpo", about = "GRPO / covariance-weighted GRPO lab on synthetic verifiable tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy; writes config echo, metrics, checkpoints and eval.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, applied after the config file.
        #[arg(long = "set", value_name = "K=V")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint of a run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy pass@1 of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Task kind (parity, modsum, copy, reverse); other task fields come
        /// from the config or `--set`.
        #[arg(long)]
        task: Option<String>,
        #[arg(long = "set", value_name = "K=V")]
        set: Vec<String>,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pool token covariances over rollout groups; write percentile table and
    /// cumulative curve.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        groups: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "K=V")]
        set: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "diagnose")]
        out: PathBuf,
    },
    /// Render metrics logs (or a cumulative-curve CSV) as SVG + CSV.
    Plot {
        /// One path, or two comma-separated paths to overlay.
        #[arg(long, value_delimiter = ',')]
        log: Vec<PathBuf>,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            set,
            out,
            resume: from,
        } => {
            let cfg = parse_config(config.as_deref(), &set)?;
            let summary = match from {
                Some(ckpt) => resume(&cfg, Checkpoint::load(&ckpt)?, &out)?,
                None => train(&cfg, &out)?,
            };
            if let Some(last) = summary.records.last() {
                println!(
                    "step {} mean_reward {:.4} pass_rate {:.4} entropy {:.4}",
                    last.step, last.mean_reward, last.pass_rate, last.entropy_mc
                );
            }
            println!(
                "greedy pass@1 {:.4} over {} prompts; run written to {}",
                summary.eval.pass_at_1,
                summary.eval.n_prompts,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            config,
            task,
            mut set,
            n,
            seed,
        } => {
            if let Some(kind) = task {
                set.push(format!("task={kind}"));
            }
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = task_config(config.as_deref(), &set, &ckpt.params)?;
            let report = evaluate(&ckpt.params, &cfg.task, n, cfg.max_completion_len(), seed)?;
            println!("{}", serde_json::to_string(&report).map_err(std::io::Error::from)?);
        }
        Command::Diagnose {
            checkpoint,
            groups,
            config,
            set,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = task_config(config.as_deref(), &set, &ckpt.params)?;
            let report = cmd_diagnose(&ckpt.params, &cfg, groups, seed, &out)?;
            print!("{}", report.render_table());
            println!("wrote {}", out.display());
        }
        Command::Plot { log, kind, out } => {
            let kind: PlotKind = kind.parse()?;
            let (svg, csv) = cmd_plot(&log, kind, &out)?;
            println!("wrote {} and {}", svg.display(), csv.display());
        }
    }
    Ok(())
}

/// Config whose task matches a loaded policy. Context length and feature
/// map always come from the checkpoint.
fn task_config(path: Option<&Path>, set: &[String], params: &PolicyParams) -> Result<TrainConfig> {
    let mut cfg = parse_config(path, set)?;
    if cfg.task.vocab_size != params.vocab_size {
        return Err(Error::Config(format!(
            "checkpoint vocab_size {} differs from task vocab_size {}",
            params.vocab_size, cfg.task.vocab_size
        )));
    }
    cfg.context_len = Some(params.context_len);
    cfg.feature_map = params.feature_map;
    Ok(cfg)
}

/// Roll out `n_groups` groups from `params`, pool their per-group token
/// covariances and write `percentiles.csv`, `cumulative.csv` and
/// `table.txt` into `out_dir`.
pub fn cmd_diagnose(params: &PolicyParams, cfg: &TrainConfig, n_groups: usize, seed: u64, out_dir: &Path) -> Result<CovReport> {
    if n_groups == 0 {
        return Err(Error::Config("--groups must be >= 1".into()));
    }
    let settings = cfg.rollout_settings();
    let frozen = snapshot(params, 0);
    let covs: Vec<Vec<f64>> = (0..n_groups)
        .into_par_iter()
        .map(|i| {
            let prompt = env_generate(&cfg.task, rng::derive_seed(seed, &[purpose::DIAGNOSE, i as u64]))?;
            let mut r = rng::stream(seed, &[purpose::DIAGNOSE, i as u64, 1]);
            let group = rollout_group(params, &cfg.task, &prompt, cfg.group_size, &settings, &mut r, &frozen, &frozen)?;
            Ok(token_covariances(&group).cov.into_iter().flatten().collect())
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<f64> = covs.into_iter().flatten().collect();
    let report = CovReport::from_covariances(&pooled)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("percentiles.csv"), report.percentile_csv())?;
    fs::write(out_dir.join("cumulative.csv"), report.cumulative_csv())?;
    fs::write(out_dir.join("table.txt"), report.render_table())?;
    Ok(report)
}
