//! Fixtures and oracles shared by the integration tests. The oracles use
//! fixed-point iteration rather than the library's linear solves.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selab::mdp::{FeatureMap, SoftmaxPolicy, TabularMdp};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normalized(mut row: Vec<f64>) -> Vec<f64> {
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= z);
    let sum: f64 = row.iter().sum();
    let i = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    row[i] += 1.0 - sum;
    row
}

/// Dense MDP with strictly positive kernel rows, so every policy is ergodic.
pub fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize, gamma: f64) -> TabularMdp {
    let mut kernel = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        kernel.extend(normalized((0..ns).map(|_| rng.gen_range(0.05..1.0)).collect()));
    }
    let reward = (0..ns * na).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let alpha = normalized((0..ns).map(|_| rng.gen_range(0.1..1.0)).collect());
    TabularMdp::new(ns, na, kernel, reward, alpha, gamma, vec![false; ns]).unwrap()
}

pub fn random_policy(rng: &mut ChaCha8Rng, nf: usize, na: usize, scale: f64) -> SoftmaxPolicy {
    SoftmaxPolicy::from_flat(nf, na, (0..nf * na).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// `π(a|s)` by hand from the logits.
pub fn action_probs(policy: &SoftmaxPolicy, fmap: &FeatureMap, ns: usize) -> Vec<Vec<f64>> {
    (0..ns)
        .map(|s| {
            let row = policy.row(fmap.feature_of(s));
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

fn step_dist(mdp: &TabularMdp, pi: &[Vec<f64>], mu: &[f64]) -> Vec<f64> {
    let ns = mdp.n_states();
    let mut next = vec![0.0; ns];
    for s in 0..ns {
        if mu[s] == 0.0 {
            continue;
        }
        for (a, &p) in pi[s].iter().enumerate() {
            for (t, &k) in mdp.kernel_row(s, a).iter().enumerate() {
                next[t] += mu[s] * p * k;
            }
        }
    }
    next
}

/// `d̄ = (1 − γ) Σ_t γᵗ Pr(S_t = ·)` by summing the series until the tail is
/// below `1e-16`.
pub fn series_occupancy(mdp: &TabularMdp, pi: &[Vec<f64>]) -> Vec<f64> {
    let gamma = mdp.gamma();
    let mut mu = mdp.alpha().to_vec();
    let mut d = vec![0.0; mu.len()];
    let mut w = 1.0 - gamma;
    while w > 1e-18 {
        for (acc, m) in d.iter_mut().zip(&mu) {
            *acc += w * m;
        }
        mu = step_dist(mdp, pi, &mu);
        w *= gamma;
    }
    d
}

/// `Q^π` by repeated Bellman backups.
pub fn iterated_q(mdp: &TabularMdp, pi: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (ns, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut q = vec![vec![0.0; na]; ns];
    loop {
        let v: Vec<f64> = (0..ns).map(|s| pi[s].iter().zip(&q[s]).map(|(p, x)| p * x).sum()).collect();
        let mut delta: f64 = 0.0;
        let mut next = vec![vec![0.0; na]; ns];
        for s in 0..ns {
            for a in 0..na {
                let cont: f64 = if mdp.is_terminal(s) {
                    0.0
                } else {
                    mdp.kernel_row(s, a).iter().zip(&v).map(|(k, x)| k * x).sum()
                };
                next[s][a] = mdp.reward(s, a) + gamma * cont;
                delta = delta.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        if delta < 1e-14 {
            return q;
        }
    }
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn rel_inf_error(got: &[f64], want: &[f64], floor: f64) -> f64 {
    let num = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let den = want.iter().map(|x| x.abs()).fold(0.0, f64::max).max(floor);
    num / den
}
