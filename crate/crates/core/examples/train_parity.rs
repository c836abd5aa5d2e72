//! Train GRPO and CW-GRPO side by side on Parity and compare greedy pass@1
//! and sampling entropy.
//!
//! cargo run --release --example train_parity [steps] [out_dir]

use std::path::PathBuf;

use cwgrpo::{train, Method, TrainConfig};

fn main() -> cwgrpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse().expect("steps")).unwrap_or(300);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cwgrpo_parity"));

    let base = TrainConfig {
        steps,
        learning_rate: 0.05,
        beta: 0.2,
        checkpoint_every: 100,
        ..TrainConfig::default()
    };
    for method in [Method::Grpo, Method::CwGrpo] {
        let cfg = TrainConfig { method, ..base.clone() };
        let run = train(&cfg, &out.join(method.to_string()))?;
        println!("{method}");
        for r in run.records.iter().filter(|r| r.step % 50 == 0 || r.step == 1) {
            println!(
                "  step {:>4} reward {:.3} pass {:.3} entropy {:.3} sigma_c {:.3} w~ [{:.3}, {:.3}]",
                r.step, r.mean_reward, r.pass_rate, r.entropy_mc, r.sigma_cov, r.min_norm_weight, r.max_norm_weight
            );
        }
        println!("  greedy pass@1 {:.3}, run in {}", run.eval.pass_at_1, run.out_dir.display());
    }
    Ok(())
}
