//! Training configuration and its flat `key = value` file format.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! keys are rejected. `context_len` and `max_completion_len` accept `auto`,
//! resolved from the task shape.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cov_reweight::SIGMA_FLOOR;
use crate::envs::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::grpo::{LossOptions, RolloutSettings, ADV_EPS};
use crate::optim::OptimizerKind;
use crate::policy::{FeatureMap, PolicyParams};

/// Learning rate of the original large-model runs. Far too small to move a
/// desk-scale policy in a few hundred steps; kept for reference only.
pub const REFERENCE_LLM_LEARNING_RATE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Grpo,
    CwGrpo,
    /// Zero weight for tokens with `|c| > tau * sigma`.
    ClipCov(f64),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Grpo => f.write_str("GRPO"),
            Method::CwGrpo => f.write_str("CW_GRPO"),
            Method::ClipCov(tau) => write!(f, "ClipCov({tau})"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('-', "_");
        if let Some(inner) = lower.strip_prefix("clipcov(").or_else(|| lower.strip_prefix("clip_cov(")) {
            let tau = inner
                .strip_suffix(')')
                .and_then(|t| t.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("bad method `{s}`")))?;
            return Ok(Method::ClipCov(tau));
        }
        match lower.as_str() {
            "grpo" => Ok(Method::Grpo),
            "cw_grpo" | "cwgrpo" => Ok(Method::CwGrpo),
            "clipcov" | "clip_cov" => Ok(Method::ClipCov(3.0)),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

/// Where covariance means, bandwidth and normalization are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovScope {
    Group,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub group_size: usize,
    /// Sampling only; every log-probability in the loss is at temperature 1.
    pub temperature: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub prompts_per_step: usize,
    /// `None` = `answer_len + 3`.
    pub max_completion_len: Option<usize>,
    pub inner_epochs: usize,
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub sigma_floor: f64,
    pub adv_eps: f64,
    pub feature_map: FeatureMap,
    /// `None` = `prompt_len + 1`.
    pub context_len: Option<usize>,
    pub init_scale: f64,
    pub cov_scope: CovScope,
    pub ratio_clip: Option<f64>,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Greedy pass@1 prompts evaluated at the end of a run.
    pub eval_prompts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            group_size: 12,
            temperature: 0.7,
            beta: 0.04,
            learning_rate: 1e-2,
            steps: 100,
            prompts_per_step: 12,
            max_completion_len: None,
            inner_epochs: 1,
            method: Method::CwGrpo,
            optimizer: OptimizerKind::ADAM,
            seed: 0,
            sigma_floor: SIGMA_FLOOR,
            adv_eps: ADV_EPS,
            feature_map: FeatureMap::Hybrid,
            context_len: None,
            init_scale: 0.01,
            cov_scope: CovScope::Group,
            ratio_clip: None,
            checkpoint_every: 50,
            eval_prompts: 256,
        }
    }
}

pub const KEYS: &[&str] = &[
    "task",
    "vocab_size",
    "prompt_len",
    "answer_len",
    "modulus",
    "group_size",
    "temperature",
    "beta",
    "learning_rate",
    "steps",
    "prompts_per_step",
    "max_completion_len",
    "inner_epochs",
    "method",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "seed",
    "sigma_floor",
    "adv_eps",
    "feature_map",
    "context_len",
    "init_scale",
    "cov_scope",
    "ratio_clip",
    "checkpoint_every",
    "eval_prompts",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

impl TrainConfig {
    pub fn max_completion_len(&self) -> usize {
        self.max_completion_len.unwrap_or(self.task.answer_len + 3)
    }

    pub fn context_len(&self) -> usize {
        self.context_len.unwrap_or(self.task.prompt_len + 1)
    }

    pub fn rollout_settings(&self) -> RolloutSettings {
        RolloutSettings {
            max_len: self.max_completion_len(),
            temperature: self.temperature,
            adv_eps: self.adv_eps,
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            beta: self.beta,
            ratio_clip: self.ratio_clip,
        }
    }

    /// Initial policy for this config (also the reference policy).
    pub fn init_policy(&self) -> Result<PolicyParams> {
        PolicyParams::init(
            self.task.vocab_size,
            self.context_len(),
            self.feature_map,
            self.init_scale,
            crate::rng::derive_seed(self.seed, &[0]),
        )
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "task" => self.task.kind = v.parse::<TaskKind>()?,
            "vocab_size" => self.task.vocab_size = num(key, v)?,
            "prompt_len" => self.task.prompt_len = num(key, v)?,
            "answer_len" => self.task.answer_len = num(key, v)?,
            "modulus" => self.task.modulus = num(key, v)?,
            "group_size" => self.group_size = num(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "prompts_per_step" => self.prompts_per_step = num(key, v)?,
            "max_completion_len" => self.max_completion_len = auto(key, v)?,
            "inner_epochs" => self.inner_epochs = num(key, v)?,
            "method" => self.method = v.parse()?,
            "optimizer" => {
                self.optimizer = match v.to_ascii_lowercase().as_str() {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => match self.optimizer {
                        adam @ OptimizerKind::Adam { .. } => adam,
                        OptimizerKind::Sgd => OptimizerKind::ADAM,
                    },
                    _ => return Err(Error::Config(format!("unknown optimizer `{v}`"))),
                }
            }
            k @ ("adam_beta1" | "adam_beta2" | "adam_eps") => {
                let x: f64 = num(k, v)?;
                let (mut b1, mut b2, mut eps) = match self.optimizer {
                    OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
                    OptimizerKind::Sgd => (0.9, 0.999, 1e-8),
                };
                match k {
                    "adam_beta1" => b1 = x,
                    "adam_beta2" => b2 = x,
                    _ => eps = x,
                }
                if let OptimizerKind::Adam { .. } = self.optimizer {
                    self.optimizer = OptimizerKind::Adam {
                        beta1: b1,
                        beta2: b2,
                        eps,
                    };
                }
            }
            "seed" => self.seed = num(key, v)?,
            "sigma_floor" => self.sigma_floor = num(key, v)?,
            "adv_eps" => self.adv_eps = num(key, v)?,
            "feature_map" => self.feature_map = v.parse()?,
            "context_len" => self.context_len = auto(key, v)?,
            "init_scale" => self.init_scale = num(key, v)?,
            "cov_scope" => {
                self.cov_scope = match v.to_ascii_lowercase().as_str() {
                    "group" => CovScope::Group,
                    "batch" => CovScope::Batch,
                    _ => return Err(Error::Config(format!("unknown cov_scope `{v}`"))),
                }
            }
            "ratio_clip" => {
                self.ratio_clip = if v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("off") {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "eval_prompts" => self.eval_prompts = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return fail(format!("group_size >= 2 required, got {}", self.group_size));
        }
        if self.steps == 0 {
            return fail("steps >= 1 required".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate > 0 required, got {}", self.learning_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature > 0 required, got {}", self.temperature));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta >= 0 required, got {}", self.beta));
        }
        if self.prompts_per_step == 0 {
            return fail("prompts_per_step >= 1 required".into());
        }
        if self.inner_epochs == 0 {
            return fail("inner_epochs >= 1 required".into());
        }
        if self.max_completion_len() == 0 {
            return fail("max_completion_len >= 1 required".into());
        }
        if let Method::ClipCov(tau) = self.method {
            if !(tau > 0.0) {
                return fail(format!("ClipCov tau > 0 required, got {tau}"));
            }
        }
        if let Some(eps) = self.ratio_clip {
            if !(eps > 0.0 && eps < 1.0) {
                return fail(format!("ratio_clip must lie in (0, 1), got {eps}"));
            }
        }
        if !(self.sigma_floor >= 0.0) || !(self.adv_eps >= 0.0) {
            return fail("sigma_floor and adv_eps must be >= 0".into());
        }
        PolicyParams::zeros(self.task.vocab_size, self.context_len(), self.feature_map)?;
        Ok(())
    }

    /// Parse the flat text format on top of the defaults.
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::ConfigParse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k, v).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Every key with its resolved value; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let t = &self.task;
        let _ = writeln!(s, "task = {}", t.kind);
        let _ = writeln!(s, "vocab_size = {}", t.vocab_size);
        let _ = writeln!(s, "prompt_len = {}", t.prompt_len);
        let _ = writeln!(s, "answer_len = {}", t.answer_len);
        let _ = writeln!(s, "modulus = {}", t.modulus);
        let _ = writeln!(s, "group_size = {}", self.group_size);
        let _ = writeln!(s, "temperature = {}", self.temperature);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(
            s,
            "learning_rate = {}  # large-model reference: {REFERENCE_LLM_LEARNING_RATE}",
            self.learning_rate
        );
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "prompts_per_step = {}", self.prompts_per_step);
        let _ = writeln!(s, "max_completion_len = {}", self.max_completion_len());
        let _ = writeln!(s, "inner_epochs = {}", self.inner_epochs);
        let _ = writeln!(s, "method = {}", self.method);
        match self.optimizer {
            OptimizerKind::Sgd => {
                let _ = writeln!(s, "optimizer = sgd");
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let _ = writeln!(s, "optimizer = adam");
                let _ = writeln!(s, "adam_beta1 = {beta1}");
                let _ = writeln!(s, "adam_beta2 = {beta2}");
                let _ = writeln!(s, "adam_eps = {eps}");
            }
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "sigma_floor = {}", self.sigma_floor);
        let _ = writeln!(s, "adv_eps = {}", self.adv_eps);
        let _ = writeln!(s, "feature_map = {}", self.feature_map);
        let _ = writeln!(s, "context_len = {}", self.context_len());
        let _ = writeln!(s, "init_scale = {}", self.init_scale);
        let scope = match self.cov_scope {
            CovScope::Group => "group",
            CovScope::Batch => "batch",
        };
        let _ = writeln!(s, "cov_scope = {scope}");
        match self.ratio_clip {
            Some(eps) => {
                let _ = writeln!(s, "ratio_clip = {eps}");
            }
            None => {
                let _ = writeln!(s, "ratio_clip = none");
            }
        }
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "eval_prompts = {}", self.eval_prompts);
        s
    }

    /// Resolve `auto` fields so the value is independent of later task edits.
    pub fn resolved(&self) -> Self {
        Self {
            max_completion_len: Some(self.max_completion_len()),
            context_len: Some(self.context_len()),
            ..self.clone()
        }
    }
}

/// Read a config file, apply `k=v` overrides last, and validate.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            TrainConfig::parse_str(&text, p)?
        }
        None => TrainConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
