//! Actor-critic on slippery FrozenLake with and without the discounted
//! state-entropy reward bonus.

use selab::agents::{train, LearningRateSchedule, Mode, Schedules, TrainConfig};
use selab::env::{EnvName, EnvSpec};

fn main() -> selab::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for (label, mode, lambda) in [("baseline", Mode::Unregularized, 0.0), ("state entropy", Mode::RewardBonus, 0.1)] {
        let mut finals = Vec::new();
        for seed in 0..seeds {
            let mut cfg = TrainConfig::new(EnvSpec::new(EnvName::FrozenLake), 3000);
            cfg.mode = mode;
            cfg.lambda = lambda;
            cfg.update_period = 10;
            cfg.seed = seed;
            cfg.schedules = Schedules {
                a: LearningRateSchedule::polynomial(0.5, 0.51),
                b: LearningRateSchedule::polynomial(1.0, 0.51),
                c: LearningRateSchedule::polynomial(500.0, 0.55),
            };
            let out = train(&cfg)?;
            finals.push(out.final_return(100));
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        println!("{label:<14} mean final return {mean:.3}  per seed {finals:.3?}");
    }
    Ok(())
}
