//! Runs a small lambda sweep through the harness and checks that rerunning
//! the same config reproduces the metrics byte for byte.

use selab::harness::{run, sweep, ExperimentConfig};

const CONFIG: &str = r#"{
  "env": {"name": "chain"},
  "method": {"type": "train", "mode": "reward_bonus", "episodes": 20, "update_period": 5},
  "seeds": [0, 1],
  "output_dir": "out/example_sweep",
  "emit": ["metrics", "heatmap"]
}"#;

fn main() -> selab::Result<()> {
    let mut cfg = ExperimentConfig::from_json(CONFIG)?;
    if let Some(dir) = std::env::args().nth(1) {
        cfg.output_dir = dir.into();
    }
    let summary = sweep(&cfg, &[0.01, 0.1], Some(2))?;
    for (lambda, s) in &summary.runs {
        let r = &s.aggregate["final_return"];
        println!("lambda {lambda:<5} final return {:.3} +- {:.3} over {} seeds", r.mean, r.stderr, r.n);
    }

    let first = run(&cfg, Some(1))?;
    let a = std::fs::read(cfg.output_dir.join("seed_0/metrics.csv"))?;
    let second = run(&cfg, Some(2))?;
    let b = std::fs::read(cfg.output_dir.join("seed_0/metrics.csv"))?;
    println!(
        "rerun identical: metrics {}, aggregates {}",
        a == b,
        first.aggregate == second.aggregate
    );
    Ok(())
}
