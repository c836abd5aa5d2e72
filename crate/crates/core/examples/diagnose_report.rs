//! Percentile table and cumulative-contribution curve of token covariances
//! for an untrained and a briefly trained policy.

use cwgrpo::cli::cmd_diagnose;
use cwgrpo::{train, Checkpoint, TrainConfig};

fn main() -> cwgrpo::Result<()> {
    let dir = std::env::temp_dir().join("cwgrpo_diagnose");
    let cfg = TrainConfig {
        steps: 40,
        learning_rate: 0.05,
        beta: 0.2,
        ..TrainConfig::default()
    };
    let untrained = cfg.init_policy()?;
    let run = train(&cfg, &dir.join("run"))?;
    let trained = Checkpoint::load(&run.final_checkpoint)?.params;

    for (name, params) in [("untrained", &untrained), ("after 40 steps", &trained)] {
        let out = dir.join(name.replace(' ', "_"));
        let report = cmd_diagnose(params, &cfg, 256, 0, &out)?;
        println!("{name}: {} tokens", report.token_count);
        print!("{}", report.render_table());
        let curve = &report.cumulative_curve;
        // where the top 1% of tokens by |c| lands on the curve
        if let Some((x, y)) = curve.iter().find(|(x, _)| *x >= 0.01) {
            println!("top {:.1}% of tokens carry {:.1}% of sum |c|", x * 100.0, y * 100.0);
        }
        println!("written to {}\n", out.display());
    }
    Ok(())
}
