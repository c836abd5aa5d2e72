//! Generate prompts for every task kind and score a few hand-written
//! responses.

use cwgrpo::{env_generate, env_verify, TaskKind, TaskSpec};

fn main() -> cwgrpo::Result<()> {
    let tasks = [
        TaskSpec::default(),
        TaskSpec {
            kind: TaskKind::ModSum,
            vocab_size: 8,
            prompt_len: 3,
            answer_len: 1,
            modulus: 5,
        },
        TaskSpec {
            kind: TaskKind::Copy,
            vocab_size: 6,
            prompt_len: 3,
            answer_len: 3,
            modulus: 2,
        },
        TaskSpec {
            kind: TaskKind::Reverse,
            vocab_size: 6,
            prompt_len: 3,
            answer_len: 3,
            modulus: 2,
        },
    ];
    for spec in &tasks {
        let prompt = env_generate(spec, 42)?;
        let ans = spec.answer_marker();
        let eos = spec.eos();
        let correct = spec.encode(&prompt.target);
        let mut wrong_answer = correct.clone();
        wrong_answer[1] = (wrong_answer[1] + 1) % spec.data_alphabet() as u32;
        let cases = [
            ("correct", correct.clone()),
            ("scratch first", [vec![0], correct.clone()].concat()),
            ("wrong answer", wrong_answer),
            ("empty answer", vec![ans, eos]),
            ("no EOS", correct[..correct.len() - 1].to_vec()),
        ];
        println!("{} prompt {:?} target {:?}", spec.kind, prompt.tokens, prompt.target);
        for (name, response) in cases {
            let r = env_verify(spec, &prompt, &response);
            println!("  {name:<14} {response:?} -> accuracy {} format {} total {}", r.accuracy, r.format, r.total);
        }
    }
    Ok(())
}
