//! Group-relative policy optimization (GRPO) and its covariance-weighted
//! variant (CW-GRPO) for small autoregressive softmax policies.
//!
//! The crate is a desk-scale laboratory: tasks have rule-verifiable rewards
//! ([`envs`]), policies are linear-softmax models with closed-form gradients
//! ([`policy`]), and every quantity in the training objective
//! ([`grpo`], [`cov_reweight`]) can be checked against an independent
//! oracle. [`diagnostics`] holds the entropy and covariance analyses,
//! [`trainer`] the optimization loop, and [`cli`] the `cwgrpo` binary.
//!
//! See the `examples/` directory for one runnable program per capability.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod cov_reweight;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod grpo;
pub mod optim;
pub mod plot;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{parse_config, CovScope, Method, TrainConfig};
pub use cov_reweight::{cw_grpo_weights, TokenStats};
pub use envs::{env_generate, env_verify, Prompt, RewardBreakdown, TaskKind, TaskSpec, Token};
pub use error::{Error, Result};
pub use grpo::{compute_advantages, grpo_loss_and_grad, rollout_group, GroupRollout, LossReport};
pub use policy::{FeatureMap, PolicyParams, Snapshot, Trajectory};
pub use trainer::{evaluate, train, EvalReport, MetricsRecord, Trainer};
