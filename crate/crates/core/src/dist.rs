//! Exact and empirical state distributions.
//!
//! Exact routes solve linear systems on the induced chain; empirical routes
//! work from sampled trajectories. The two are kept independent so each can
//! serve as the other's oracle.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{draw_next, draw_start, GridLayout, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{policy_table, FeatureMap, InducedChain, SoftmaxPolicy, TabularMdp};
use crate::rng::CounterRng;

/// Residual bound on `‖Pᵀd − d‖₁` for stationary distributions.
pub const STATIONARY_TOL: f64 = 1e-10;
pub const STATIONARY_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    ExactDiscounted,
    ExactStationary,
    EmpiricalDiscounted,
    EmpiricalStationary,
}

impl DistKind {
    pub fn is_exact(self) -> bool {
        matches!(self, DistKind::ExactDiscounted | DistKind::ExactStationary)
    }
}

/// Nonnegative vector over states. `mass` is 1 for exact kinds and may be
/// below 1 for truncated empirical estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub probs: Vec<f64>,
    pub kind: DistKind,
    pub mass: f64,
}

impl StateDistribution {
    pub fn new(probs: Vec<f64>, kind: DistKind) -> Result<Self> {
        if let Some((state, &value)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(Error::NegativeProbability { state, value });
        }
        let mass = probs.iter().sum();
        Ok(Self { probs, kind, mass })
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// Probabilities scaled to total mass 1.
    pub fn normalized(&self) -> Vec<f64> {
        if self.mass > 0.0 {
            self.probs.iter().map(|p| p / self.mass).collect()
        } else {
            self.probs.clone()
        }
    }

    /// TV distance after renormalising both sides.
    pub fn tv(&self, other: &StateDistribution) -> f64 {
        linalg::total_variation(&self.normalized(), &other.normalized())
    }

    /// `state_index,probability` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state_index,probability\n");
        for (s, p) in self.probs.iter().enumerate() {
            let _ = writeln!(out, "{s},{p}");
        }
        out
    }

    /// Probabilities laid out on the grid, one CSV row per grid row.
    pub fn to_grid_csv(&self, layout: &GridLayout) -> Result<String> {
        grid_csv(&self.probs, layout)
    }
}

/// Renders per-state values as a CSV grid aligned to `layout`.
pub fn grid_csv<T: std::fmt::Display>(values: &[T], layout: &GridLayout) -> Result<String> {
    if values.len() != layout.n_cells() {
        return Err(Error::Shape(format!(
            "{} values for a {}x{} grid",
            values.len(),
            layout.rows,
            layout.cols
        )));
    }
    let mut out = String::new();
    for row in values.chunks(layout.cols) {
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// `d̄ᵀ = (1 − γ) αᵀ (I − γ P_pi)^{-1}`, solved without forming the inverse.
pub fn exact_discounted(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<StateDistribution> {
    let chain = InducedChain::new(mdp, policy, fmap)?;
    discounted_from_kernel(mdp, &chain.kernel)
}

pub(crate) fn discounted_from_kernel(mdp: &TabularMdp, kernel: &DMatrix<f64>) -> Result<StateDistribution> {
    let gamma = mdp.gamma();
    let a = linalg::resolvent_matrix(kernel, gamma);
    let x = linalg::solve_transpose(&a, &DVector::from_column_slice(mdp.alpha()))?;
    let reachable = mdp.reachable_from_start();
    let probs: Vec<f64> = x
        .iter()
        .zip(&reachable)
        .map(|(v, &r)| if r { ((1.0 - gamma) * v).max(0.0) } else { 0.0 })
        .collect();
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Solve(format!("discounted occupancy sums to {sum}")));
    }
    Ok(StateDistribution {
        probs,
        kind: DistKind::ExactDiscounted,
        mass: 1.0,
    })
}

/// Fixed point of `d = P_piᵀ d`. With `restart`, terminal rows are replaced
/// by `alpha` first.
pub fn exact_stationary(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    restart: bool,
) -> Result<StateDistribution> {
    let pi = policy_table(mdp, policy, fmap)?;
    let kernel = chain_kernel(mdp, &pi, restart);
    let probs = stationary_of(&kernel, mdp.alpha())?;
    Ok(StateDistribution {
        probs,
        kind: DistKind::ExactStationary,
        mass: 1.0,
    })
}

/// Induced kernel, optionally with terminal states restarting from `alpha`.
pub(crate) fn chain_kernel(mdp: &TabularMdp, pi: &[f64], restart: bool) -> DMatrix<f64> {
    let mut p = crate::mdp::induced_kernel_from_table(mdp, pi);
    if restart {
        for s in (0..mdp.n_states()).filter(|&s| mdp.is_terminal(s)) {
            for (next, &a) in mdp.alpha().iter().enumerate() {
                p[(s, next)] = a;
            }
        }
    }
    p
}

/// States reachable from the support of `start` along positive entries of `p`.
pub(crate) fn reachable(p: &DMatrix<f64>, start: &[f64]) -> Vec<bool> {
    let n = p.nrows();
    let mut seen: Vec<bool> = start.iter().map(|&x| x > 0.0).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&s| seen[s]).collect();
    while let Some(s) = stack.pop() {
        for next in 0..n {
            if p[(s, next)] > 0.0 && !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen
}

/// Stationary law of the chain started from `start`.
///
/// A direct solve on the reachable block seeds a damped power iteration
/// `d ← (d + Pᵀd) / 2`, which runs until `‖Pᵀd − d‖₁ ≤ STATIONARY_TOL`.
/// When the reachable block has more than one closed class the solve fails
/// and the iteration starts from `start` itself.
pub(crate) fn stationary_of(p: &DMatrix<f64>, start: &[f64]) -> Result<Vec<f64>> {
    let d0 = direct_stationary(p, start).unwrap_or_else(|| start.to_vec());
    damped_power(p, d0)
}

fn damped_power(p: &DMatrix<f64>, mut d: Vec<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let pt = p.transpose();
    let mut image = DVector::zeros(n);
    for _ in 0..STATIONARY_CAP {
        let dv = DVector::from_column_slice(&d);
        pt.mul_to(&dv, &mut image);
        let residual: f64 = image.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum();
        if residual <= STATIONARY_TOL {
            let z: f64 = d.iter().sum();
            return Ok(d.into_iter().map(|x| x / z).collect());
        }
        for (x, y) in d.iter_mut().zip(image.iter()) {
            *x = 0.5 * (*x + y);
        }
    }
    Err(Error::NoConvergence {
        what: "stationary power iteration",
        iters: STATIONARY_CAP,
        hint: "; the chain is likely reducible with slowly mixing classes".into(),
    })
}

fn direct_stationary(p: &DMatrix<f64>, start: &[f64]) -> Option<Vec<f64>> {
    let live: Vec<usize> = reachable(p, start)
        .iter()
        .enumerate()
        .filter_map(|(s, &r)| r.then_some(s))
        .collect();
    let m = live.len();
    // (I − P)ᵀ restricted to the live block, last equation swapped for Σd = 1.
    let mut a = DMatrix::zeros(m, m);
    for (i, &si) in live.iter().enumerate() {
        for (j, &sj) in live.iter().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            a[(j, i)] = delta - p[(si, sj)];
        }
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let x = linalg::solve(&a, &b).ok()?;
    if x.iter().any(|&v| v < -1e-9) {
        return None;
    }
    let mut d = vec![0.0; p.nrows()];
    for (i, &s) in live.iter().enumerate() {
        d[s] = x[i].max(0.0);
    }
    Some(d)
}

/// Shannon entropy in nats of the renormalised distribution.
pub fn entropy(dist: &StateDistribution) -> Result<f64> {
    if let Some((state, &value)) = dist.probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
        return Err(Error::NegativeProbability { state, value });
    }
    Ok(entropy_of(&dist.normalized()))
}

/// `−Σ p log p` with `0 log 0 = 0`.
pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Accepted states together with the number of states inspected for each.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceDraws {
    pub states: Vec<usize>,
    pub trials: Vec<u64>,
}

/// Draws `n_accepted` states distributed as `d̄` by simulating the policy from
/// `alpha` and accepting the current state w.p. `1 − γ`; every acceptance
/// restarts the episode.
pub fn acceptance_sample(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    n_accepted: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    Ok(acceptance_sample_detailed(mdp, policy, fmap, n_accepted, seed)?.states)
}

pub fn acceptance_sample_detailed(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    n_accepted: usize,
    seed: u64,
) -> Result<AcceptanceDraws> {
    let pi = policy_table(mdp, policy, fmap)?;
    let na = mdp.n_actions();
    let keep = 1.0 - mdp.gamma();
    let mut states = Vec::with_capacity(n_accepted);
    let mut trials = Vec::with_capacity(n_accepted);
    for i in 0..n_accepted as u64 {
        let rng = CounterRng::new(seed, i);
        let coin = CounterRng::new(seed, i | 1 << 63);
        let mut s = draw_start(mdp, &rng);
        let mut t = 0usize;
        while coin.uniform(t as u64) >= keep {
            let a = rng.categorical(crate::env::action_counter(t), &pi[s * na..(s + 1) * na]);
            s = draw_next(mdp, s, a, &rng, t);
            t += 1;
        }
        states.push(s);
        trials.push(t as u64 + 1);
    }
    Ok(AcceptanceDraws { states, trials })
}

/// Visit counts of `states` over `n_states` bins.
pub fn histogram(states: &[usize], n_states: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_states];
    for &s in states {
        counts[s] += 1;
    }
    counts
}

pub fn frequencies(states: &[usize], n_states: usize) -> Vec<f64> {
    let n = states.len().max(1) as f64;
    histogram(states, n_states).into_iter().map(|c| c as f64 / n).collect()
}

/// How the per-episode discounted weights are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorForm {
    /// `(1 − γ) γᵗ` per visit, averaged over episodes.
    #[default]
    Consistent,
    /// The same weights with an extra `1/T` inside each episode.
    Literal,
}

/// Importance-weighted estimate of `d̄` from whole episodes.
///
/// Each episode puts `(1 − γ) γᵗ` on `S_t` for `t = 0..=T`; episodes are
/// averaged. The result is sub-stochastic with mass equal to the episode mean
/// of `1 − γ^{T+1}`.
pub fn empirical_discounted(
    trajectories: &[Trajectory],
    n_states: usize,
    gamma: f64,
    form: EstimatorForm,
) -> Result<StateDistribution> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    let mut probs = vec![0.0; n_states];
    for traj in trajectories {
        let states = traj.states();
        let scale = match form {
            EstimatorForm::Consistent => 1.0,
            EstimatorForm::Literal => 1.0 / traj.len().max(1) as f64,
        };
        let mut w = (1.0 - gamma) * scale;
        for s in states {
            probs[s] += w;
            w *= gamma;
        }
    }
    let n = trajectories.len() as f64;
    probs.iter_mut().for_each(|p| *p /= n);
    let mass = probs.iter().sum();
    Ok(StateDistribution {
        probs,
        kind: DistKind::EmpiricalDiscounted,
        mass,
    })
}

/// Uniform visit frequencies over all states of all trajectories.
pub fn empirical_stationary(trajectories: &[Trajectory], n_states: usize) -> Result<StateDistribution> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    let states: Vec<usize> = trajectories.iter().flat_map(Trajectory::states).collect();
    Ok(StateDistribution {
        probs: frequencies(&states, n_states),
        kind: DistKind::EmpiricalStationary,
        mass: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    Discounted,
}

/// Entropy estimate from a state sequence and a log-density.
///
/// `Uniform` returns `−(1/T) Σ_t log p(S_t)`; `Discounted` returns
/// `−(1 − γ) Σ_t γᵗ log p(S_t)`.
pub fn empirical_entropy(
    states: &[usize],
    log_density: impl Fn(usize) -> f64,
    weighting: Weighting,
    gamma: f64,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("empty state sequence".into()));
    }
    let mut acc = 0.0;
    let mut w = match weighting {
        Weighting::Uniform => 1.0 / states.len() as f64,
        Weighting::Discounted => 1.0 - gamma,
    };
    for &s in states {
        let lp = log_density(s);
        if !lp.is_finite() {
            return Err(Error::NonFiniteDensity { state: s, value: lp });
        }
        acc -= w * lp;
        if weighting == Weighting::Discounted {
            w *= gamma;
        }
    }
    Ok(acc)
}
