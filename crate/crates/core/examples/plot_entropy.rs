//! Overlay the entropy curves of a GRPO and a CW-GRPO run as SVG + CSV.

use cwgrpo::plot::{cmd_plot, PlotKind};
use cwgrpo::{train, Method, TrainConfig};

fn main() -> cwgrpo::Result<()> {
    let dir = std::env::temp_dir().join("cwgrpo_plot");
    let base = TrainConfig {
        steps: 150,
        learning_rate: 0.05,
        beta: 0.2,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut logs = Vec::new();
    for method in [Method::Grpo, Method::CwGrpo] {
        let out = dir.join(method.to_string());
        train(&TrainConfig { method, ..base.clone() }, &out)?;
        logs.push(out.join("metrics.jsonl"));
    }
    for kind in [PlotKind::Entropy, PlotKind::Reward] {
        let (svg, csv) = cmd_plot(&logs, kind, &dir.join("plots"))?;
        println!("{} and {}", svg.display(), csv.display());
    }
    Ok(())
}
