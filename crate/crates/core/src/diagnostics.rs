//! Entropy estimates and covariance analyses.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{evaluate_steps, PolicyParams, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyMethod {
    MonteCarlo,
    ExactPerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Nats.
    pub value: f64,
    pub method: EntropyMethod,
    pub token_count: usize,
}

/// Mean over responses of the mean over tokens of `-logp_cur`.
pub fn entropy_mc(trajectories: &[Trajectory]) -> Result<EntropyEstimate> {
    per_response_mean(trajectories.iter().map(|t| t.logp_cur.iter().map(|lp| -lp).collect()))
        .map(|(value, token_count)| EntropyEstimate {
            value,
            method: EntropyMethod::MonteCarlo,
            token_count,
        })
}

/// Same double average as [`entropy_mc`], but each token contributes the
/// exact entropy of the next-token distribution it was drawn from.
pub fn entropy_exact_along(params: &PolicyParams, trajectories: &[Trajectory]) -> Result<EntropyEstimate> {
    let rows = trajectories.iter().map(|t| {
        evaluate_steps(params, &t.prompt_tokens, &t.response_tokens)
            .iter()
            .map(|s| -s.log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>())
            .collect()
    });
    per_response_mean(rows).map(|(value, token_count)| EntropyEstimate {
        value,
        method: EntropyMethod::ExactPerStep,
        token_count,
    })
}

fn per_response_mean(rows: impl Iterator<Item = Vec<f64>>) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut responses = 0usize;
    let mut tokens = 0usize;
    for row in rows {
        if row.is_empty() {
            continue;
        }
        total += row.iter().sum::<f64>() / row.len() as f64;
        responses += 1;
        tokens += row.len();
    }
    if tokens == 0 {
        return Err(Error::Contract("entropy needs at least one token".into()));
    }
    Ok((total / responses as f64, tokens))
}

/// Shannon entropy `-sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy_exact_step(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Percent levels reported by default.
pub const DEFAULT_PERCENTILES: [f64; 5] = [0.01, 1.0, 20.0, 40.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    /// Percent, e.g. `0.01` for 0.01%.
    pub percentile: f64,
    /// Magnitude at that rank among positive covariances.
    pub positive: Option<f64>,
    /// Signed value at that rank among negative covariances.
    pub negative: Option<f64>,
}

/// For each percent level `p`, the value at descending-magnitude rank
/// `ceil(p/100 * count)` among positive and among negative covariances.
pub fn covariance_percentiles(c: &[f64], percentiles: &[f64]) -> Result<Vec<PercentileRow>> {
    if c.is_empty() {
        return Err(Error::Contract("covariances must be nonempty".into()));
    }
    let mut pos: Vec<f64> = c.iter().copied().filter(|&x| x > 0.0).collect();
    let mut neg: Vec<f64> = c.iter().copied().filter(|&x| x < 0.0).collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(|a, b| a.total_cmp(b));
    let at = |sorted: &[f64], p: f64| -> Option<f64> {
        if sorted.is_empty() {
            return None;
        }
        let rank = ((p / 100.0 * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
        Some(sorted[rank - 1])
    };
    Ok(percentiles
        .iter()
        .map(|&p| PercentileRow {
            percentile: p,
            positive: at(&pos, p),
            negative: at(&neg, p),
        })
        .collect())
}

/// Points `(k / n, sum of the k largest |c| / sum |c|)` for `k = 1..=n`.
pub fn cumulative_contribution(c: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut mags: Vec<f64> = c.iter().map(|x| x.abs()).collect();
    let total: f64 = mags.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Contract("cumulative contribution needs sum |c| > 0".into()));
    }
    mags.sort_by(|a, b| b.total_cmp(a));
    let n = mags.len();
    let mut acc = 0.0;
    let mut out: Vec<(f64, f64)> = mags
        .iter()
        .enumerate()
        .map(|(k, m)| {
            acc += m;
            ((k + 1) as f64 / n as f64, (acc / total).min(1.0))
        })
        .collect();
    if let Some(last) = out.last_mut() {
        last.1 = 1.0;
    }
    Ok(out)
}

/// First-order entropy change `-eta * mean(c)`.
pub fn predict_entropy_delta(eta: f64, c: &[f64]) -> f64 {
    -eta * c.iter().sum::<f64>() / c.len() as f64
}

/// Percentile table plus cumulative curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovReport {
    pub percentile_table: Vec<PercentileRow>,
    /// Starts at the origin, ends at `(1, 1)`. Empty when every covariance is 0.
    pub cumulative_curve: Vec<(f64, f64)>,
    pub token_count: usize,
}

impl CovReport {
    pub fn from_covariances(c: &[f64]) -> Result<Self> {
        let percentile_table = covariance_percentiles(c, &DEFAULT_PERCENTILES)?;
        let cumulative_curve = match cumulative_contribution(c) {
            Ok(points) => std::iter::once((0.0, 0.0)).chain(points).collect(),
            Err(_) => Vec::new(),
        };
        Ok(Self {
            percentile_table,
            cumulative_curve,
            token_count: c.len(),
        })
    }

    pub fn percentile_csv(&self) -> String {
        let mut out = String::from("percentile,positive,negative\n");
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.percentile_table {
            let _ = writeln!(out, "{},{},{}", r.percentile, cell(r.positive), cell(r.negative));
        }
        out
    }

    pub fn cumulative_csv(&self) -> String {
        let mut out = String::from("token_fraction,covariance_mass_fraction\n");
        for (x, y) in &self.cumulative_curve {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    /// Human-readable table with one row per percent level.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>20} {:>20}", "Percentile", "Positive Covariance", "Negative Covariance");
        let cell = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        for r in &self.percentile_table {
            let _ = writeln!(
                out,
                "{:<12} {:>20} {:>20}",
                format!("{:.2}%", r.percentile),
                cell(r.positive),
                cell(r.negative)
            );
        }
        if self.percentile_table.iter().all(|r| r.positive.is_none() && r.negative.is_none()) {
            out.push_str("(no nonzero covariances: every group had zero advantage spread)\n");
        }
        out
    }
}

/// Exact single-state softmax bandits, for checking the entropy law.
pub mod bandit {
    use super::entropy_exact_step;
    use crate::policy::{log_softmax, softmax};

    pub fn entropy(logits: &[f64]) -> f64 {
        entropy_exact_step(&softmax(logits, 1.0))
    }

    /// `Cov_{a ~ pi}(log pi(a), y(a))`.
    pub fn policy_covariance(logits: &[f64], y: &[f64]) -> f64 {
        let lp = log_softmax(logits);
        let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let mean_lp: f64 = p.iter().zip(&lp).map(|(p, l)| p * l).sum();
        let mean_y: f64 = p.iter().zip(y).map(|(p, y)| p * y).sum();
        p.iter()
            .zip(&lp)
            .zip(y)
            .map(|((p, l), y)| p * (l - mean_lp) * (y - mean_y))
            .sum()
    }

    /// Natural-gradient step of the expected advantage; for a tabular softmax
    /// it moves each logit by `eta * A(a)`.
    pub fn natural_step(logits: &[f64], adv: &[f64], eta: f64) -> Vec<f64> {
        logits.iter().zip(adv).map(|(l, a)| l + eta * a).collect()
    }

    /// Plain gradient ascent on `E_pi[A]`: `dJ/dtheta_a = pi(a) (A(a) - E_pi A)`.
    pub fn vanilla_step(logits: &[f64], adv: &[f64], eta: f64) -> Vec<f64> {
        let p = softmax(logits, 1.0);
        let mean: f64 = p.iter().zip(adv).map(|(p, a)| p * a).sum();
        logits
            .iter()
            .zip(&p)
            .zip(adv)
            .map(|((l, p), a)| l + eta * p * (a - mean))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Prompt;
    use crate::policy::{sample_response, softmax, FeatureMap, PolicyParams};
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn exact_entropy_examples() {
        assert!((entropy_exact_step(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert!((entropy_exact_step(&[0.25; 4]) - 1.3863).abs() < 1e-4);
        assert_eq!(entropy_exact_step(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy_exact_step(&[0.5, 0.5, 0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mc_entropy_examples() {
        let t = Trajectory {
            prompt_tokens: vec![],
            response_tokens: vec![0],
            logp_cur: vec![-2.0],
            logp_old: vec![-2.0],
            logp_ref: vec![-2.0],
            terminated: false,
        };
        let e = entropy_mc(std::slice::from_ref(&t)).unwrap();
        assert_eq!((e.value, e.token_count, e.method), (2.0, 1, EntropyMethod::MonteCarlo));
        assert!(entropy_mc(&[]).is_err());
        let det = Trajectory {
            logp_cur: vec![0.0, 0.0],
            response_tokens: vec![1, 1],
            ..t
        };
        assert_eq!(entropy_mc(&[det]).unwrap().value, 0.0);
    }

    /// 1e4 single-token draws from a fixed context: MC within 3 standard errors
    /// of the exact entropy of that context.
    #[test]
    fn mc_entropy_converges() {
        for (fm, scale) in [(FeatureMap::OneHotLastK, 0.0), (FeatureMap::OneHotLastK, 1.5)] {
            let p = PolicyParams::init(4, 2, fm, scale, 17).unwrap();
            let prompt = Prompt {
                tokens: vec![1, 2],
                target: vec![],
            };
            let mut r = rng::stream(2, &[]);
            let trajs: Vec<Trajectory> = (0..10_000).map(|_| sample_response(&p, &prompt, 1, 1.0, &mut r)).collect();
            let mc = entropy_mc(&trajs).unwrap();
            let exact = entropy_exact_along(&p, &trajs[..1]).unwrap().value;
            let xs: Vec<f64> = trajs.iter().map(|t| -t.logp_cur[0]).collect();
            let n = xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mc.value).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((mc.value - exact).abs() <= 3.0 * sd / n.sqrt() + 1e-12, "{} vs {exact}", mc.value);
            if scale == 0.0 {
                assert!((mc.value - 4f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn percentile_examples() {
        let rows = covariance_percentiles(&[1.0, -1.0], &[100.0]).unwrap();
        assert_eq!((rows[0].positive, rows[0].negative), (Some(1.0), Some(-1.0)));
        let rows = covariance_percentiles(&[0.5, 0.2], &DEFAULT_PERCENTILES).unwrap();
        assert!(rows.iter().all(|r| r.negative.is_none()));
        assert_eq!(rows.len(), 5);
        assert!(covariance_percentiles(&[], &[1.0]).is_err());
    }

    /// Sort-based oracle on 1000 values `+-k/1000`.
    #[test]
    fn percentiles_match_sorted_ranks() {
        let c: Vec<f64> = (1..=1000)
            .map(|k| if k % 2 == 0 { k as f64 / 1000.0 } else { -(k as f64) / 1000.0 })
            .collect();
        let mut positives: Vec<f64> = c.iter().copied().filter(|&x| x > 0.0).collect();
        positives.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let rows = covariance_percentiles(&c, &DEFAULT_PERCENTILES).unwrap();
        assert_eq!(rows[1].positive, Some(positives[4]));
        assert_eq!(rows[0].positive, Some(positives[0]));
        assert_eq!(rows[4].positive, Some(*positives.last().unwrap()));
        assert_eq!(rows[2].negative, Some(-801.0 / 1000.0));
        for w in rows.windows(2) {
            assert!(w[0].positive >= w[1].positive);
            assert!(w[0].negative.unwrap().abs() >= w[1].negative.unwrap().abs());
        }
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_contribution(&[3.0, -1.0]).unwrap(), vec![(0.5, 0.75), (1.0, 1.0)]);
        let flat = cumulative_contribution(&[2.0; 4]).unwrap();
        assert!(flat.iter().all(|(x, y)| (x - y).abs() < 1e-15));
        let spike = cumulative_contribution(&[0.0, 5.0, 0.0]).unwrap();
        assert_eq!(spike[0].1, 1.0);
        assert!(cumulative_contribution(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn entropy_delta_prediction() {
        assert_eq!(predict_entropy_delta(0.1, &[1.0, -1.0]), 0.0);
        assert!((predict_entropy_delta(0.01, &[0.25, 0.75]) + 0.005).abs() < 1e-15);
    }

    #[test]
    fn bandit_entropy_laws_are_first_order() {
        let mut r = rng::stream(12, &[]);
        for _ in 0..20 {
            let v = r.gen_range(2..12);
            let logits: Vec<f64> = (0..v).map(|_| r.gen_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..v).map(|_| r.gen_range(-1.0..1.0)).collect();
            let p = softmax(&logits, 1.0);
            let mean: f64 = p.iter().zip(&raw).map(|(p, a)| p * a).sum();
            let adv: Vec<f64> = raw.iter().map(|a| a - mean).collect();
            let pa: Vec<f64> = p.iter().zip(&adv).map(|(p, a)| p * a).collect();
            let h0 = bandit::entropy(&logits);
            let residual = |eta: f64, natural: bool| {
                let (next, cov) = if natural {
                    // uncentered advantages: the shift cancels in the covariance
                    (bandit::natural_step(&logits, &raw, eta), bandit::policy_covariance(&logits, &raw))
                } else {
                    (bandit::vanilla_step(&logits, &adv, eta), bandit::policy_covariance(&logits, &pa))
                };
                (bandit::entropy(&next) - h0 + eta * cov).abs()
            };
            for natural in [true, false] {
                let (a, b) = (residual(1e-3, natural), residual(5e-4, natural));
                assert!(a < 1e-5, "{a}");
                assert!(a / b > 3.0, "{a} {b}");
            }
        }
    }

    #[test]
    fn report_layout() {
        let r = CovReport::from_covariances(&[3.0, -1.0, 0.5]).unwrap();
        assert_eq!(r.cumulative_curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.cumulative_curve.last(), Some(&(1.0, 1.0)));
        assert!(r.percentile_csv().starts_with("percentile,positive,negative\n0.01,3,-1\n"));
        assert!(r.render_table().contains("0.01%"));
        let zero = CovReport::from_covariances(&[0.0; 3]).unwrap();
        assert!(zero.cumulative_curve.is_empty());
        assert!(zero.render_table().contains("no nonzero covariances"));
    }
}
