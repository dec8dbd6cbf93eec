//! Exact gradient ascent on the regularized objective for several lambdas,
//! reporting iterations until the return is within 2% of optimal.

use selab::env::{build, EnvName, EnvSpec};
use selab::exact_pg::{analytic_gradient, finite_diff_gradient, run_exact_pg, RegKind, FD_STEP};
use selab::linalg::relative_inf_error;
use selab::mdp::{value_iteration, SoftmaxPolicy};

fn main() -> selab::Result<()> {
    let env = build(&EnvSpec::new(EnvName::GridworldOpen))?;
    let theta0 = SoftmaxPolicy::zeros(env.fmap.n_features(), env.mdp.n_actions());

    let exact = analytic_gradient(&env.mdp, &theta0, &env.fmap, 0.1, RegKind::Discounted)?;
    let fd = finite_diff_gradient(&env.mdp, &theta0, &env.fmap, 0.1, RegKind::Discounted, FD_STEP)?;
    println!("gradient check at theta0: relative error {:.2e}", relative_inf_error(&exact, &fd, 1e-8));

    let optimum = value_iteration(&env.mdp, 1e-12)?.start_value(&env.mdp);
    let target = optimum - 0.02 * optimum.abs();
    println!("J* = {optimum:.5}");
    for lambda in [0.0, 0.01, 0.1] {
        for kind in [RegKind::Discounted, RegKind::Stationary] {
            let trace = run_exact_pg(&env.mdp, &theta0, &env.fmap, lambda, 0.1, 5000, kind)?;
            let last = trace.records.last().expect("nonempty trace");
            let hit = trace.first_reaching(target).map_or("never".to_string(), |i| i.to_string());
            println!("lambda {lambda:<5} {kind:?}: J = {:.4}, H = {:.3}, within 2% at {hit}", last.j, last.entropy);
        }
    }
    Ok(())
}
