//! Trains the latent density model on states drawn from a frozen policy and
//! compares its marginal and entropy estimate with the exact distribution.

use selab::density::{decoder_marginal, init, log_density, update_phi, DensitySample, LatentConfig};
use selab::dist::{acceptance_sample, entropy, exact_discounted};
use selab::env::{build, EnvName, EnvSpec};
use selab::linalg::total_variation;
use selab::mdp::SoftmaxPolicy;

fn main() -> selab::Result<()> {
    let env = build(&EnvSpec::new(EnvName::GridworldOpen).with("rows", 4.0).with("cols", 4.0))?;
    let ns = env.mdp.n_states();
    let policy = SoftmaxPolicy::zeros(env.fmap.n_features(), env.mdp.n_actions());
    let d = exact_discounted(&env.mdp, &policy, &env.fmap)?;
    let theta = policy.flat().to_vec();

    let (updates, batch) = (2000, 32);
    let draws = acceptance_sample(&env.mdp, &policy, &env.fmap, updates * batch + 10_000, 1)?;
    let mut phi = init(LatentConfig::default(), theta.len(), ns, 0)?;
    for k in 0..updates {
        let samples: Vec<DensitySample> = draws[k * batch..(k + 1) * batch]
            .iter()
            .map(|&state| DensitySample { theta: &theta, state, weight: 1.0 })
            .collect();
        phi = update_phi(&phi, &samples, 0.05, k as u64)?;
        if k % 500 == 0 {
            let tv = total_variation(&decoder_marginal(&phi, 1000, 7), &d.probs);
            println!("update {k:>5}: TV(marginal, d) = {tv:.4}");
        }
    }
    let held_out = &draws[updates * batch..];
    let mut neg_elbo = 0.0;
    for (i, &s) in held_out.iter().enumerate() {
        neg_elbo -= log_density(&phi, &theta, s, 1_000_000 + i as u64)?;
    }
    neg_elbo /= held_out.len() as f64;
    println!(
        "final TV = {:.4}; -mean ELBO = {neg_elbo:.4}, exact H = {:.4}",
        total_variation(&decoder_marginal(&phi, 1000, 7), &d.probs),
        entropy(&d)?
    );
    Ok(())
}
