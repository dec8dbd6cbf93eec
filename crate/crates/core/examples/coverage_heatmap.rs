//! Visits in the first 1000 steps on the slits gridworld, written as CSV and
//! PGM heatmaps for both bonus types.

use selab::agents::{train, LearningRateSchedule, Mode, Schedules, TrainConfig};
use selab::env::{slits_layout, EnvName, EnvSpec};
use selab::harness::{emit_heatmap, write_atomic};

fn main() -> selab::Result<()> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "out/coverage".into());
    let layout = slits_layout();
    for (label, mode) in [("state_entropy", Mode::RewardBonus), ("policy_entropy", Mode::PolicyEntropyBaseline)] {
        let mut cfg = TrainConfig::new(EnvSpec::new(EnvName::GridworldSlits), 1000);
        cfg.mode = mode;
        cfg.lambda = 0.1;
        cfg.max_steps = Some(1000);
        cfg.update_period = 10;
        cfg.schedules = Schedules {
            a: LearningRateSchedule::polynomial(0.5, 0.51),
            b: LearningRateSchedule::polynomial(1.0, 0.51),
            c: LearningRateSchedule::polynomial(500.0, 0.55),
        };
        let out = train(&cfg)?;
        let counts: Vec<f64> = out.visits.iter().map(|&v| v as f64).collect();
        let map = emit_heatmap(&counts, Some(&layout))?;
        let dir = std::path::Path::new(&out_dir).join(label);
        write_atomic(&dir.join("heatmap.csv"), map.csv.as_bytes())?;
        if let Some(pgm) = &map.pgm {
            write_atomic(&dir.join("heatmap.pgm"), pgm)?;
        }
        println!("{label}: {} distinct states, heatmap in {}", out.distinct_states(), dir.display());
    }
    Ok(())
}
