//! Covariance-weighted token reweighting.
//!
//! For every token, `c = (logp - mean logp) * (A - mean A)` where both means
//! run over all tokens of the group (so the advantage mean is token-weighted).
//! A Gaussian kernel whose bandwidth is the population standard deviation of
//! the `c` values suppresses extreme tokens, and the weights are rescaled to
//! sum to the token count `N`. The only constant on this path is the
//! numerical floor on the bandwidth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::GroupRollout;

/// Bandwidths below this are treated as zero (all weights 1).
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Per-token covariances of one group (rows are responses).
#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub cov: Vec<Vec<f64>>,
    pub logp_mean: f64,
    pub adv_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub cov: Vec<Vec<f64>>,
    /// Kernel weights, in (0, 1].
    pub weight: Vec<Vec<f64>>,
    /// Normalized weights, summing to the token count.
    pub norm_weight: Vec<Vec<f64>>,
    pub sigma: f64,
    pub logp_mean: f64,
    pub adv_mean: f64,
}

/// Scalar digest of a [`TokenStats`] for metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub sigma: f64,
    pub max_abs_cov: f64,
    /// Share of `sum |c|` held by the top 1% of tokens by `|c|`.
    pub top1_share: f64,
    pub min_norm_weight: f64,
    pub max_norm_weight: f64,
}

pub fn token_covariances(group: &GroupRollout) -> Covariances {
    pooled_covariances(std::slice::from_ref(group)).pop().expect("one group")
}

/// Covariances with the means pooled over every token of every group.
pub fn pooled_covariances(groups: &[GroupRollout]) -> Vec<Covariances> {
    let n: usize = groups.iter().map(|g| g.total_tokens).sum();
    let n = n as f64;
    let mut logp_sum = 0.0;
    let mut adv_sum = 0.0;
    for g in groups {
        for (t, a) in g.trajectories.iter().zip(&g.advantages) {
            logp_sum += t.logp_cur.iter().sum::<f64>();
            adv_sum += a * t.len() as f64;
        }
    }
    let logp_mean = logp_sum / n;
    let adv_mean = adv_sum / n;
    groups
        .iter()
        .map(|g| Covariances {
            cov: g
                .trajectories
                .iter()
                .zip(&g.advantages)
                .map(|(t, a)| t.logp_cur.iter().map(|lp| (lp - logp_mean) * (a - adv_mean)).collect())
                .collect(),
            logp_mean,
            adv_mean,
        })
        .collect()
}

pub fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Gaussian kernel weights `exp(-c^2 / 2 sigma^2)` with `sigma` the
/// population std of `c`. Below `sigma_floor` every weight is 1.
pub fn gaussian_weights(c: &[f64], sigma_floor: f64) -> Result<(Vec<f64>, f64)> {
    if c.is_empty() {
        return Err(Error::Contract("covariances must be nonempty".into()));
    }
    let sigma = population_std(c);
    if !(sigma >= sigma_floor) {
        return Ok((vec![1.0; c.len()], sigma));
    }
    let two_var = 2.0 * sigma * sigma;
    Ok((c.iter().map(|x| (-(x * x) / two_var).exp()).collect(), sigma))
}

/// Rescale so the weights sum to their count.
pub fn normalize_weights(w: &[f64]) -> Result<Vec<f64>> {
    if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(Error::Contract("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = w.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Contract("weights sum to zero".into()));
    }
    let n = w.len() as f64;
    Ok(w.iter().map(|x| x * n / sum).collect())
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], like: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut it = flat.iter().copied();
    like.iter().map(|row| it.by_ref().take(row.len()).collect()).collect()
}

/// Covariance -> kernel -> normalization for one group. The result's
/// `norm_weight` is the token-weight argument of the GRPO loss.
pub fn cw_grpo_weights(group: &GroupRollout, sigma_floor: f64) -> Result<TokenStats> {
    Ok(cw_grpo_weights_pooled(std::slice::from_ref(group), sigma_floor)?
        .pop()
        .expect("one group"))
}

/// Batch-level variant: means, bandwidth and normalization all pool over the
/// whole batch, so per-group weights sum to the batch token count only
/// jointly.
pub fn cw_grpo_weights_pooled(groups: &[GroupRollout], sigma_floor: f64) -> Result<Vec<TokenStats>> {
    let covs = pooled_covariances(groups);
    let rows: Vec<Vec<f64>> = covs.iter().flat_map(|c| c.cov.iter().cloned()).collect();
    let flat = flatten(&rows);
    let (w, sigma) = gaussian_weights(&flat, sigma_floor)?;
    let w_norm = normalize_weights(&w)?;
    let w_rows = unflatten(&w, &rows);
    let wn_rows = unflatten(&w_norm, &rows);

    let mut offset = 0;
    Ok(covs
        .into_iter()
        .map(|c| {
            let g = c.cov.len();
            let stats = TokenStats {
                weight: w_rows[offset..offset + g].to_vec(),
                norm_weight: wn_rows[offset..offset + g].to_vec(),
                cov: c.cov,
                sigma,
                logp_mean: c.logp_mean,
                adv_mean: c.adv_mean,
            };
            offset += g;
            stats
        })
        .collect())
}

/// Simplified covariance-clipping baseline: zero weight where
/// `|c| > tau * sigma`, one elsewhere, no renormalization.
pub fn clip_cov_weights(group: &GroupRollout, tau: f64) -> Result<Vec<Vec<f64>>> {
    Ok(clip_cov_weights_pooled(std::slice::from_ref(group), tau)?
        .pop()
        .expect("one group"))
}

pub fn clip_cov_weights_pooled(groups: &[GroupRollout], tau: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("clip tau must be > 0, got {tau}")));
    }
    let covs = pooled_covariances(groups);
    let flat: Vec<f64> = covs.iter().flat_map(|c| flatten(&c.cov)).collect();
    let sigma = population_std(&flat);
    let degenerate = !(sigma >= SIGMA_FLOOR);
    Ok(covs
        .into_iter()
        .map(|c| {
            c.cov
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|x| if !degenerate && x.abs() > tau * sigma { 0.0 } else { 1.0 })
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// Fraction of `sum |c|` held by the `ceil(frac * n)` largest magnitudes.
pub fn top_share(c: &[f64], frac: f64) -> f64 {
    let mut mags: Vec<f64> = c.iter().map(|x| x.abs()).collect();
    let total: f64 = mags.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    mags.sort_by(|a, b| b.total_cmp(a));
    let k = ((frac * mags.len() as f64 - 1e-9).ceil() as usize).clamp(1, mags.len());
    mags[..k].iter().sum::<f64>() / total
}

impl TokenStats {
    pub fn flat_cov(&self) -> Vec<f64> {
        flatten(&self.cov)
    }

    pub fn summary(&self) -> WeightSummary {
        summarize(&self.flat_cov(), self.sigma, &flatten(&self.norm_weight))
    }
}

/// Summary of a token-covariance set and the token weights actually applied.
pub fn summarize(cov: &[f64], sigma: f64, applied: &[f64]) -> WeightSummary {
    WeightSummary {
        sigma,
        max_abs_cov: cov.iter().fold(0.0, |m, x| m.max(x.abs())),
        top1_share: top_share(cov, 0.01),
        min_norm_weight: applied.iter().copied().fold(f64::INFINITY, f64::min),
        max_norm_weight: applied.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}
