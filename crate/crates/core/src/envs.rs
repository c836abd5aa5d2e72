//! Synthetic sequence tasks with rule-verifiable rewards.
//!
//! A vocabulary of `V` tokens is split into a contiguous data alphabet
//! `0..V-2`, an answer marker `V-2` and an end-of-sequence token `V-1`. A
//! well-formed response is any run of scratch tokens, one answer marker, the
//! answer, and a terminal EOS.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    /// Single-token answer: XOR of the prompt bits. Prompt tokens are 0/1.
    Parity,
    /// Single-token answer: sum of prompt tokens modulo `modulus`.
    ModSum,
    Copy,
    Reverse,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::Parity => "parity",
            TaskKind::ModSum => "modsum",
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
        };
        f.write_str(s)
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parity" => Ok(TaskKind::Parity),
            "modsum" | "mod_sum" => Ok(TaskKind::ModSum),
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Includes the answer marker and EOS.
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub answer_len: usize,
    /// Only read by [`TaskKind::ModSum`].
    pub modulus: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Parity,
            vocab_size: 6,
            prompt_len: 4,
            answer_len: 1,
            modulus: 4,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size < 4 {
            return fail(format!("vocab_size >= 4 required, got {}", self.vocab_size));
        }
        if self.prompt_len == 0 {
            return fail("prompt_len >= 1 required".into());
        }
        if self.answer_len == 0 {
            return fail("answer_len >= 1 required".into());
        }
        match self.kind {
            TaskKind::Parity | TaskKind::ModSum if self.answer_len != 1 => {
                fail(format!("{} requires answer_len = 1, got {}", self.kind, self.answer_len))
            }
            TaskKind::ModSum if self.modulus == 0 || self.modulus > self.vocab_size - 2 => fail(
                format!(
                    "modsum requires 1 <= modulus <= vocab_size - 2 = {}, got {}",
                    self.vocab_size - 2,
                    self.modulus
                ),
            ),
            TaskKind::Copy | TaskKind::Reverse if self.answer_len != self.prompt_len => fail(
                format!(
                    "{} requires answer_len = prompt_len = {}, got {}",
                    self.kind, self.prompt_len, self.answer_len
                ),
            ),
            _ => Ok(()),
        }
    }

    pub fn answer_marker(&self) -> Token {
        (self.vocab_size - 2) as Token
    }

    pub fn eos(&self) -> Token {
        (self.vocab_size - 1) as Token
    }

    /// Number of tokens prompt tokens are drawn from.
    pub fn data_alphabet(&self) -> usize {
        match self.kind {
            TaskKind::Parity => 2,
            _ => self.vocab_size - 2,
        }
    }

    /// The answer as a well-formed response: `[ANS, target.., EOS]`.
    pub fn encode(&self, target: &[Token]) -> Vec<Token> {
        let mut out = Vec::with_capacity(target.len() + 2);
        out.push(self.answer_marker());
        out.extend_from_slice(target);
        out.push(self.eos());
        out
    }

    /// The task rule mapping prompt tokens to the target answer.
    pub fn target_for(&self, tokens: &[Token]) -> Vec<Token> {
        match self.kind {
            TaskKind::Parity => vec![tokens.iter().fold(0, |acc, &t| acc ^ (t & 1))],
            TaskKind::ModSum => {
                let sum: u64 = tokens.iter().map(|&t| u64::from(t)).sum();
                vec![(sum % self.modulus as u64) as Token]
            }
            TaskKind::Copy => tokens.to_vec(),
            TaskKind::Reverse => tokens.iter().rev().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<Token>,
    /// Hidden from the policy.
    pub target: Vec<Token>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub format: f64,
    pub total: f64,
}

/// Draw a prompt. Pure in `(spec, seed)`.
pub fn env_generate(spec: &TaskSpec, seed: u64) -> Result<Prompt> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &[rng::purpose::PROMPT]);
    let alphabet = spec.data_alphabet() as Token;
    let tokens: Vec<Token> = (0..spec.prompt_len).map(|_| rng.gen_range(0..alphabet)).collect();
    let target = spec.target_for(&tokens);
    Ok(Prompt { tokens, target })
}

/// Score a response. Malformed responses score zero rather than failing.
pub fn env_verify(spec: &TaskSpec, prompt: &Prompt, response: &[Token]) -> RewardBreakdown {
    let ans = spec.answer_marker();
    let eos = spec.eos();
    let markers: Vec<usize> = positions(response, ans);
    let ends: Vec<usize> = positions(response, eos);

    let well_formed = markers.len() == 1
        && ends.len() == 1
        && ends[0] == response.len() - 1
        && markers[0] < ends[0];
    let format = if well_formed { 1.0 } else { 0.0 };
    let accuracy = if well_formed && response[markers[0] + 1..ends[0]] == prompt.target[..] {
        1.0
    } else {
        0.0
    };
    RewardBreakdown {
        accuracy,
        format,
        total: accuracy + format,
    }
}

fn positions(response: &[Token], token: Token) -> Vec<usize> {
    response
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| (t == token).then_some(i))
        .collect()
}
