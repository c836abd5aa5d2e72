//! Autoregressive softmax policy over a fixed vocabulary.
//!
//! Logits are linear in a binary feature vector of the last `K` tokens of the
//! context (prompt followed by the response so far), so every gradient is
//! available in closed form. Positions before the start of the context are
//! padding and activate no feature.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{Prompt, Token};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Upper bound on `num_features * vocab_size`.
pub const MAX_WEIGHTS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMap {
    /// Concatenated one-hot of each of the last `K` tokens: `K * V` features.
    OneHotLastK,
    /// One-hot of the whole last-`K` tuple (padding counts as its own
    /// symbol): `(V + 1)^K` features, i.e. a tabular policy over windows.
    TupleLastK,
    /// Both of the above, concatenated: shared per-position features plus a
    /// per-window table.
    Hybrid,
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMap::OneHotLastK => "onehot",
            FeatureMap::TupleLastK => "tuple",
            FeatureMap::Hybrid => "hybrid",
        })
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "onehot" | "onehotlastk" | "one_hot_last_k" => Ok(FeatureMap::OneHotLastK),
            "tuple" | "tuplelastk" | "tuple_last_k" => Ok(FeatureMap::TupleLastK),
            "hybrid" => Ok(FeatureMap::Hybrid),
            other => Err(Error::Config(format!("unknown feature_map `{other}`"))),
        }
    }
}

impl FeatureMap {
    pub fn num_features(self, vocab_size: usize, context_len: usize) -> Option<usize> {
        match self {
            FeatureMap::OneHotLastK => context_len.checked_mul(vocab_size),
            FeatureMap::TupleLastK => (vocab_size + 1).checked_pow(u32::try_from(context_len).ok()?),
            FeatureMap::Hybrid => FeatureMap::OneHotLastK
                .num_features(vocab_size, context_len)?
                .checked_add(FeatureMap::TupleLastK.num_features(vocab_size, context_len)?),
        }
    }
}

/// Weights of a linear-softmax policy, stored row-major as
/// `[num_features x vocab_size]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub vocab_size: usize,
    pub context_len: usize,
    pub feature_map: FeatureMap,
    pub weights: Vec<f64>,
}

/// Uniform `[-0.01, 0.01]` one-hot policy.
pub fn policy_init(vocab_size: usize, context_len: usize, seed: u64) -> Result<PolicyParams> {
    PolicyParams::init(vocab_size, context_len, FeatureMap::OneHotLastK, 0.01, seed)
}

impl PolicyParams {
    /// Weights i.i.d. uniform in `[-init_scale, init_scale]`.
    pub fn init(
        vocab_size: usize,
        context_len: usize,
        feature_map: FeatureMap,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeros(vocab_size, context_len, feature_map)?;
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::Config(format!("init_scale must be finite and >= 0, got {init_scale}")));
        }
        if init_scale > 0.0 {
            let mut rng = rng::stream(seed, &[]);
            for w in &mut params.weights {
                *w = rng.gen_range(-init_scale..=init_scale);
            }
        }
        Ok(params)
    }

    pub fn zeros(vocab_size: usize, context_len: usize, feature_map: FeatureMap) -> Result<Self> {
        if vocab_size < 4 {
            return Err(Error::Config(format!("vocab_size >= 4 required, got {vocab_size}")));
        }
        if context_len == 0 {
            return Err(Error::Config("context_len >= 1 required".into()));
        }
        let n = feature_map
            .num_features(vocab_size, context_len)
            .and_then(|f| f.checked_mul(vocab_size))
            .filter(|&n| n <= MAX_WEIGHTS)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{feature_map} feature map with vocab {vocab_size} and context_len {context_len} exceeds {MAX_WEIGHTS} weights"
                ))
            })?;
        Ok(Self {
            vocab_size,
            context_len,
            feature_map,
            weights: vec![0.0; n],
        })
    }

    pub fn num_features(&self) -> usize {
        self.weights.len() / self.vocab_size
    }

    pub fn eos(&self) -> Token {
        (self.vocab_size - 1) as Token
    }

    /// Indices of the active (value 1) features for the window ending at the
    /// last token of `context`.
    pub fn active_features(&self, context: &[Token], out: &mut Vec<usize>) {
        out.clear();
        let k = self.context_len;
        let v = self.vocab_size;
        let start = context.len().saturating_sub(k);
        let window = &context[start..];
        let pad = k - window.len();
        let onehot = |out: &mut Vec<usize>| {
            for (j, &t) in window.iter().enumerate() {
                out.push((pad + j) * v + t as usize);
            }
        };
        let tuple = window
            .iter()
            .fold(0usize, |acc, &t| acc * (v + 1) + t as usize + 1);
        match self.feature_map {
            FeatureMap::OneHotLastK => onehot(out),
            FeatureMap::TupleLastK => out.push(tuple),
            FeatureMap::Hybrid => {
                onehot(out);
                out.push(k * v + tuple);
            }
        }
    }

    fn logits_from(&self, features: &[usize], out: &mut [f64]) {
        let v = self.vocab_size;
        out.fill(0.0);
        for &f in features {
            for (o, w) in out.iter_mut().zip(&self.weights[f * v..(f + 1) * v]) {
                *o += w;
            }
        }
    }

    pub fn logits(&self, context: &[Token]) -> Vec<f64> {
        let mut features = Vec::new();
        self.active_features(context, &mut features);
        let mut out = vec![0.0; self.vocab_size];
        self.logits_from(&features, &mut out);
        out
    }
}

/// Numerically stable `log softmax(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - max - lse).collect()
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Next-token distribution `softmax(logits / temperature)`.
pub fn step_probs(params: &PolicyParams, context: &[Token], temperature: f64) -> Vec<f64> {
    softmax(&params.logits(context), temperature)
}

/// Per-token evaluation of a response: active features, temperature-1
/// log-probabilities of the whole vocabulary, and the chosen token.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub features: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub token: Token,
}

impl StepEval {
    pub fn logp(&self) -> f64 {
        self.log_probs[self.token as usize]
    }
}

pub fn evaluate_steps(params: &PolicyParams, prompt_tokens: &[Token], response: &[Token]) -> Vec<StepEval> {
    let mut context = prompt_tokens.to_vec();
    let mut logits = vec![0.0; params.vocab_size];
    response
        .iter()
        .map(|&token| {
            let mut features = Vec::new();
            params.active_features(&context, &mut features);
            params.logits_from(&features, &mut logits);
            context.push(token);
            StepEval {
                features,
                log_probs: log_softmax(&logits),
                token,
            }
        })
        .collect()
}

/// Temperature-1 log-probability of each response token given its prefix.
pub fn logprob_trajectory(params: &PolicyParams, prompt_tokens: &[Token], response: &[Token]) -> Vec<f64> {
    evaluate_steps(params, prompt_tokens, response)
        .iter()
        .map(StepEval::logp)
        .collect()
}

/// Gradient of one token's log-probability: `d log pi(v) / d W[f, u]` equals
/// `coeffs[u]` for every active feature `f` and zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrad {
    pub features: Vec<usize>,
    /// `1{u = v} - pi(u)`.
    pub coeffs: Vec<f64>,
}

impl TokenGrad {
    pub fn from_step(step: &StepEval) -> Self {
        let mut coeffs: Vec<f64> = step.log_probs.iter().map(|lp| -lp.exp()).collect();
        coeffs[step.token as usize] += 1.0;
        Self {
            features: step.features.clone(),
            coeffs,
        }
    }

    /// Add `scale * grad` into a dense weight-shaped buffer.
    pub fn accumulate(&self, scale: f64, dense: &mut [f64]) {
        let v = self.coeffs.len();
        for &f in &self.features {
            for (d, c) in dense[f * v..(f + 1) * v].iter_mut().zip(&self.coeffs) {
                *d += scale * c;
            }
        }
    }

    pub fn to_dense(&self, num_weights: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_weights];
        self.accumulate(1.0, &mut out);
        out
    }
}

pub fn grad_logprob(params: &PolicyParams, prompt_tokens: &[Token], response: &[Token]) -> Vec<TokenGrad> {
    evaluate_steps(params, prompt_tokens, response)
        .iter()
        .map(TokenGrad::from_step)
        .collect()
}

/// One sampled response with per-token log-probabilities (nats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_tokens: Vec<Token>,
    pub response_tokens: Vec<Token>,
    pub logp_cur: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    /// EOS was emitted.
    pub terminated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.response_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response_tokens.is_empty()
    }
}

fn draw(probs: &[f64], rng: &mut Rng) -> Token {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as Token;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1) as Token
}

/// Ancestral sampling at `temperature` until EOS or `max_len` tokens.
///
/// `logp_cur` is recorded at temperature 1 through [`evaluate_steps`]'s
/// arithmetic, so it matches [`logprob_trajectory`] bit for bit. `logp_old`
/// and `logp_ref` start as copies of `logp_cur`.
pub fn sample_response(
    params: &PolicyParams,
    prompt: &Prompt,
    max_len: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Trajectory {
    let eos = params.eos();
    let mut context = prompt.tokens.clone();
    let mut features = Vec::new();
    let mut logits = vec![0.0; params.vocab_size];
    let mut response = Vec::new();
    let mut logp = Vec::new();
    let mut terminated = false;
    while response.len() < max_len {
        params.active_features(&context, &mut features);
        params.logits_from(&features, &mut logits);
        let token = draw(&softmax(&logits, temperature), rng);
        logp.push(log_softmax(&logits)[token as usize]);
        response.push(token);
        context.push(token);
        if token == eos {
            terminated = true;
            break;
        }
    }
    Trajectory {
        prompt_tokens: prompt.tokens.clone(),
        response_tokens: response,
        logp_old: logp.clone(),
        logp_ref: logp.clone(),
        logp_cur: logp,
        terminated,
    }
}

/// Argmax decoding; exact ties are broken uniformly at random from `rng`.
pub fn greedy_response(params: &PolicyParams, prompt: &Prompt, max_len: usize, rng: &mut Rng) -> Vec<Token> {
    let eos = params.eos();
    let mut context = prompt.tokens.clone();
    let mut response = Vec::new();
    while response.len() < max_len {
        let logits = params.logits(&context);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best: Vec<usize> = (0..logits.len()).filter(|&i| logits[i] == max).collect();
        let token = if best.len() == 1 {
            best[0]
        } else {
            best[rng.gen_range(0..best.len())]
        } as Token;
        response.push(token);
        context.push(token);
        if token == eos {
            break;
        }
    }
    response
}

/// Frozen copy of a policy, used as the old or reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    params: PolicyParams,
    step: usize,
}

pub fn snapshot(params: &PolicyParams, step: usize) -> Snapshot {
    Snapshot {
        params: params.clone(),
        step,
    }
}

impl Snapshot {
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_params(fm: FeatureMap, v: usize, k: usize, seed: u64) -> PolicyParams {
        PolicyParams::init(v, k, fm, 1.0, seed).unwrap()
    }

    #[test]
    fn init_is_bounded_and_deterministic() {
        let a = policy_init(6, 3, 11).unwrap();
        let b = policy_init(6, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_features(), 18);
        assert!(a.weights.iter().all(|w| w.abs() <= 0.01));
        assert_ne!(a, policy_init(6, 3, 12).unwrap());
        assert!(policy_init(3, 3, 0).is_err());
        assert!(policy_init(6, 0, 0).is_err());
    }

    #[test]
    fn zero_init_is_uniform_everywhere() {
        let p = PolicyParams::init(5, 2, FeatureMap::OneHotLastK, 0.0, 1).unwrap();
        for ctx in [&[][..], &[0], &[1, 2, 3]] {
            let probs = step_probs(&p, ctx, 0.7);
            assert!(probs.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&[2.0, 0.0], 1.0);
        let e2 = 2f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
        let p = softmax(&[0.3, 0.2, -1.0], 1e-4);
        assert!(p[0] > 0.999);
        let lp = log_softmax(&[2.0, 0.0]);
        assert!((lp[0] - (0.880797077977882f64).ln()).abs() < 1e-12);
        assert!((lp[0] + 0.1269).abs() < 1e-4);
    }

    #[test]
    fn feature_layouts() {
        let p = PolicyParams::zeros(4, 3, FeatureMap::OneHotLastK).unwrap();
        let mut f = Vec::new();
        p.active_features(&[2], &mut f);
        assert_eq!(f, vec![2 * 4 + 2]);
        p.active_features(&[0, 1, 2, 3], &mut f);
        assert_eq!(f, vec![1, 4 + 2, 8 + 3]);
        let t = PolicyParams::zeros(4, 2, FeatureMap::TupleLastK).unwrap();
        assert_eq!(t.num_features(), 25);
        t.active_features(&[], &mut f);
        assert_eq!(f, vec![0]);
        t.active_features(&[3], &mut f);
        assert_eq!(f, vec![4]);
        t.active_features(&[9, 1, 3], &mut f);
        assert_eq!(f, vec![2 * 5 + 4]);
        assert!(PolicyParams::zeros(10, 12, FeatureMap::TupleLastK).is_err());
        let h = PolicyParams::zeros(4, 2, FeatureMap::Hybrid).unwrap();
        assert_eq!(h.num_features(), 8 + 25);
        h.active_features(&[9, 1, 3], &mut f);
        assert_eq!(f, vec![1, 4 + 3, 8 + 2 * 5 + 4]);
    }

    #[test]
    fn probabilities_normalize() {
        for fm in [FeatureMap::OneHotLastK, FeatureMap::TupleLastK, FeatureMap::Hybrid] {
            let p = random_params(fm, 7, 3, 5);
            let mut r = rng::stream(1, &[]);
            for _ in 0..200 {
                let ctx: Vec<Token> = (0..r.gen_range(0..6)).map(|_| r.gen_range(0..7)).collect();
                let probs = step_probs(&p, &ctx, r.gen_range(0.1..2.0));
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(probs.iter().all(|&x| x > 0.0));
                let lp = log_softmax(&p.logits(&ctx));
                assert!((lp.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_policy_logprob() {
        let p = PolicyParams::zeros(4, 2, FeatureMap::OneHotLastK).unwrap();
        let lp = logprob_trajectory(&p, &[0, 1], &[2, 3, 0]);
        assert!(lp.iter().all(|&x| (x + 4f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn single_token_closed_form() {
        // weight 2 on token 0 for the feature "last token is 1"
        let mut p = PolicyParams::zeros(4, 1, FeatureMap::OneHotLastK).unwrap();
        p.weights[4] = 2.0;
        p.weights[4 + 2] = -f64::INFINITY;
        p.weights[4 + 3] = -f64::INFINITY;
        let lp = logprob_trajectory(&p, &[1], &[0]);
        assert!((lp[0] - (2f64.exp() / (2f64.exp() + 1.0)).ln()).abs() < 1e-12);
    }

    /// Central finite differences on every weight of small random policies.
    #[test]
    #[allow(clippy::needless_range_loop)]
    fn grad_logprob_matches_finite_differences() {
        let h = 1e-5;
        let mut r = rng::stream(99, &[]);
        let mut worst: f64 = 0.0;
        for case in 0..120 {
            let fm = [FeatureMap::OneHotLastK, FeatureMap::TupleLastK, FeatureMap::Hybrid][case as usize % 3];
            let v = r.gen_range(4..6);
            let k = r.gen_range(1..3);
            let p = random_params(fm, v, k, case);
            let prompt: Vec<Token> = (0..r.gen_range(0..3)).map(|_| r.gen_range(0..v as Token)).collect();
            let token = r.gen_range(0..v as Token);
            let g = grad_logprob(&p, &prompt, &[token])[0].to_dense(p.weights.len());
            for i in 0..p.weights.len() {
                let mut plus = p.clone();
                plus.weights[i] += h;
                let mut minus = p.clone();
                minus.weights[i] -= h;
                let fd = (logprob_trajectory(&plus, &prompt, &[token])[0]
                    - logprob_trajectory(&minus, &prompt, &[token])[0])
                    / (2.0 * h);
                let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn gradient_columns_cancel() {
        let p = random_params(FeatureMap::OneHotLastK, 6, 2, 3);
        let g = &grad_logprob(&p, &[1, 2], &[4])[0];
        assert!(g.coeffs.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(g, &grad_logprob(&p, &[1, 2], &[4])[0]);
    }

    #[test]
    fn sampling_is_reproducible_and_self_consistent() {
        let p = random_params(FeatureMap::OneHotLastK, 6, 3, 8);
        let prompt = Prompt {
            tokens: vec![0, 1, 1],
            target: vec![0],
        };
        let a = sample_response(&p, &prompt, 12, 0.7, &mut rng::stream(4, &[]));
        let b = sample_response(&p, &prompt, 12, 0.7, &mut rng::stream(4, &[]));
        assert_eq!(a, b);
        let lp = logprob_trajectory(&p, &prompt.tokens, &a.response_tokens);
        assert_eq!(lp.len(), a.logp_cur.len());
        for (x, y) in lp.iter().zip(&a.logp_cur) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert!(a.logp_cur.iter().all(|&x| x <= 0.0));
        assert_eq!(a.terminated, a.response_tokens.last() == Some(&p.eos()));
    }

    #[test]
    fn degenerate_policy_always_same_response() {
        let mut p = PolicyParams::zeros(4, 1, FeatureMap::OneHotLastK).unwrap();
        // after token t emit t+1, after 2 emit EOS(3)
        for t in 0..3 {
            p.weights[t * 4 + t + 1] = 1e3;
        }
        let prompt = Prompt {
            tokens: vec![0],
            target: vec![],
        };
        for s in 0..20 {
            let tr = sample_response(&p, &prompt, 10, 1.0, &mut Rng::seed_from_u64(s));
            assert_eq!(tr.response_tokens, vec![1, 2, 3]);
            assert!(tr.terminated);
        }
    }

    /// 1e5 single-step draws against the exact distribution.
    #[test]
    fn empirical_frequencies_match_step_probs() {
        let p = random_params(FeatureMap::OneHotLastK, 5, 2, 21);
        let prompt = Prompt {
            tokens: vec![1, 0],
            target: vec![],
        };
        let temperature = 0.7;
        let exact = step_probs(&p, &prompt.tokens, temperature);
        let n = 100_000;
        let mut counts = [0usize; 5];
        let mut r = rng::stream(5, &[]);
        for _ in 0..n {
            let tr = sample_response(&p, &prompt, 1, temperature, &mut r);
            counts[tr.response_tokens[0] as usize] += 1;
        }
        for (c, q) in counts.iter().zip(&exact) {
            let freq = *c as f64 / n as f64;
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((freq - q).abs() < 3.0 * se, "freq {freq} vs {q}");
        }
    }

    #[test]
    fn snapshots_are_independent_copies() {
        let mut p = policy_init(5, 2, 0).unwrap();
        let s1 = snapshot(&p, 3);
        let s2 = snapshot(&p, 3);
        assert_eq!(s1, s2);
        assert_eq!(s1.params(), &p);
        assert_eq!(s1.step(), 3);
        p.weights[0] = 42.0;
        assert_ne!(s1.params(), &p);
        assert_eq!(s1, s2);
    }

    #[test]
    fn greedy_breaks_exact_ties_randomly() {
        let p = PolicyParams::zeros(4, 1, FeatureMap::OneHotLastK).unwrap();
        let prompt = Prompt {
            tokens: vec![0],
            target: vec![],
        };
        let firsts: std::collections::HashSet<Token> = (0..64)
            .map(|s| greedy_response(&p, &prompt, 1, &mut Rng::seed_from_u64(s))[0])
            .collect();
        assert_eq!(firsts.len(), 4);
    }
}
