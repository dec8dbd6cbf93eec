//! Builds every environment and prints its size and optimal start value.

use selab::env::{build, EnvName, EnvSpec};
use selab::mdp::value_iteration;

fn main() -> selab::Result<()> {
    println!("{:<24} {:>7} {:>8} {:>6} {:>10}", "name", "states", "actions", "gamma", "J*");
    for name in EnvName::ALL {
        let env = build(&EnvSpec::new(name))?;
        let opt = value_iteration(&env.mdp, 1e-10)?;
        println!(
            "{:<24} {:>7} {:>8} {:>6} {:>10.4}",
            name.as_str(),
            env.mdp.n_states(),
            env.mdp.n_actions(),
            env.mdp.gamma(),
            opt.start_value(&env.mdp)
        );
        if let Some(layout) = &env.layout {
            println!("  {}x{} grid", layout.rows, layout.cols);
        }
    }
    Ok(())
}
