//! Exact discounted and stationary distributions of a uniform policy, checked
//! against acceptance sampling and the trajectory estimator.

use selab::dist::{
    acceptance_sample, empirical_discounted, entropy, exact_discounted, exact_stationary, frequencies, EstimatorForm,
};
use selab::env::{build, sample_episodes, EnvName, EnvSpec};
use selab::linalg::total_variation;
use selab::mdp::SoftmaxPolicy;

fn main() -> selab::Result<()> {
    let env = build(&EnvSpec::new(EnvName::GridworldOpen).with("rows", 4.0).with("cols", 4.0))?;
    let policy = SoftmaxPolicy::zeros(env.fmap.n_features(), env.mdp.n_actions());
    let ns = env.mdp.n_states();

    let d = exact_discounted(&env.mdp, &policy, &env.fmap)?;
    let st = exact_stationary(&env.mdp, &policy, &env.fmap, false)?;
    println!("H(d_gamma) = {:.4}  H(d_stationary) = {:.4}", entropy(&d)?, entropy(&st)?);
    if let Some(layout) = &env.layout {
        print!("d_gamma on the grid:\n{}", d.to_grid_csv(layout)?);
    }

    let draws = acceptance_sample(&env.mdp, &policy, &env.fmap, 100_000, 7)?;
    let tv = total_variation(&frequencies(&draws, ns), &d.probs);
    println!("acceptance sampling, 1e5 draws: TV = {tv:.4}");

    let episodes = sample_episodes(&env.mdp, &policy, &env.fmap, 100, 7, 10_000)?;
    let est = empirical_discounted(&episodes, ns, env.mdp.gamma(), EstimatorForm::Consistent)?;
    println!(
        "trajectory estimator, 1e4 episodes: mass = {:.6}  TV(renormalized) = {:.4}",
        est.mass,
        total_variation(&est.normalized(), &d.probs)
    );
    Ok(())
}
