//! Finite MDPs, softmax policies over state features, and the Markov chain a
//! policy induces.
//!
//! Rewards are `r(s, a)`. Terminal states are absorbing self-loops paying
//! zero reward, so every operator here is total on episodic tasks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Default iteration cap for [`value_iteration`].
pub const VALUE_ITERATION_CAP: usize = 1_000_000;

/// A finite discounted MDP.
///
/// The kernel is stored flat, indexed `[(s * n_actions + a) * n_states + s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    alpha: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
}

/// JSON layout of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MdpDocument {
    n_states: usize,
    n_actions: usize,
    kernel: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let (ns, na) = (doc.n_states, doc.n_actions);
        if doc.kernel.len() != ns || doc.kernel.iter().any(|r| r.len() != na) {
            return Err(Error::InvalidMdp(format!(
                "kernel must have shape [{ns}][{na}][{ns}]"
            )));
        }
        if doc.reward.len() != ns || doc.reward.iter().any(|r| r.len() != na) {
            return Err(Error::InvalidMdp(format!("reward must have shape [{ns}][{na}]")));
        }
        let mut kernel = Vec::with_capacity(ns * na * ns);
        for row in doc.kernel.iter().flatten() {
            if row.len() != ns {
                return Err(Error::InvalidMdp(format!(
                    "kernel rows must have length {ns}"
                )));
            }
            kernel.extend_from_slice(row);
        }
        let reward = doc.reward.into_iter().flatten().collect();
        TabularMdp::new(ns, na, kernel, reward, doc.alpha, doc.gamma, doc.terminal)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        let (ns, na) = (m.n_states, m.n_actions);
        let kernel = (0..ns)
            .map(|s| (0..na).map(|a| m.kernel_row(s, a).to_vec()).collect())
            .collect();
        let reward = m.reward.chunks(na).map(<[f64]>::to_vec).collect();
        MdpDocument {
            n_states: ns,
            n_actions: na,
            kernel,
            reward,
            alpha: m.alpha,
            gamma: m.gamma,
            terminal: m.terminal,
        }
    }
}

fn check_distribution(row: &[f64], what: impl Fn() -> String) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidMdp(format!("{} has invalid entry {p}", what())));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidMdp(format!("{} sums to {sum}", what())));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        alpha: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("n_states and n_actions must be positive".into()));
        }
        if kernel.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidMdp(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if alpha.len() != n_states || terminal.len() != n_states {
            return Err(Error::InvalidMdp(
                "alpha and terminal must have one entry per state".into(),
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} not in (0, 1)")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("reward has a non-finite entry".into()));
        }
        let mdp = Self {
            n_states,
            n_actions,
            kernel,
            reward,
            alpha,
            gamma,
            terminal,
        };
        check_distribution(&mdp.alpha, || "alpha".to_string())?;
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(mdp.kernel_row(s, a), || format!("kernel row ({s}, {a})"))?;
                if mdp.terminal[s] {
                    if mdp.kernel_row(s, a)[s] != 1.0 {
                        return Err(Error::InvalidMdp(format!(
                            "terminal state {s} must self-loop under action {a}"
                        )));
                    }
                    if mdp.reward(s, a) != 0.0 {
                        return Err(Error::InvalidMdp(format!(
                            "terminal state {s} must pay zero reward"
                        )));
                    }
                }
            }
        }
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Rewards as an `n_states × n_actions` row-major table.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Copy of this MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut m = self.clone();
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} not in (0, 1)")));
        }
        m.gamma = gamma;
        Ok(m)
    }

    /// Copy with `c` added to every non-terminal reward.
    pub fn with_reward_shift(&self, c: f64) -> Self {
        let mut m = self.clone();
        for s in 0..m.n_states {
            if !m.terminal[s] {
                for a in 0..m.n_actions {
                    m.reward[s * m.n_actions + a] += c;
                }
            }
        }
        m
    }

    /// Copy with a different start distribution.
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        if alpha.len() != m.n_states {
            return Err(Error::InvalidMdp("alpha has wrong length".into()));
        }
        check_distribution(&alpha, || "alpha".to_string())?;
        m.alpha = alpha;
        Ok(m)
    }

    /// States reachable from the support of `alpha` through any action.
    pub fn reachable_from_start(&self) -> Vec<bool> {
        let mut seen: Vec<bool> = self.alpha.iter().map(|&p| p > 0.0).collect();
        let mut stack: Vec<usize> = (0..self.n_states).filter(|&s| seen[s]).collect();
        while let Some(s) = stack.pop() {
            for a in 0..self.n_actions {
                for (next, &p) in self.kernel_row(s, a).iter().enumerate() {
                    if p > 0.0 && !seen[next] {
                        seen[next] = true;
                        stack.push(next);
                    }
                }
            }
        }
        seen
    }

    /// Same MDP with every terminal row redirected to `alpha` (reward stays 0).
    ///
    /// The result is no longer a valid episodic MDP, so it is returned as a
    /// raw kernel rather than a `TabularMdp`.
    pub fn restart_kernel(&self) -> Vec<f64> {
        let mut kernel = self.kernel.clone();
        for s in (0..self.n_states).filter(|&s| self.terminal[s]) {
            for a in 0..self.n_actions {
                let start = (s * self.n_actions + a) * self.n_states;
                kernel[start..start + self.n_states].copy_from_slice(&self.alpha);
            }
        }
        kernel
    }
}

/// Maps each state to the feature row of the policy table that drives it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    feature_of: Vec<usize>,
    n_features: usize,
}

impl FeatureMap {
    pub fn identity(n_states: usize) -> Self {
        Self {
            feature_of: (0..n_states).collect(),
            n_features: n_states,
        }
    }

    pub fn new(feature_of: Vec<usize>, n_features: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidFeatureMap("n_features must be positive".into()));
        }
        let mut hit = vec![false; n_features];
        for (s, &f) in feature_of.iter().enumerate() {
            if f >= n_features {
                return Err(Error::InvalidFeatureMap(format!(
                    "state {s} maps to feature {f} >= {n_features}"
                )));
            }
            hit[f] = true;
        }
        if let Some(f) = hit.iter().position(|h| !h) {
            return Err(Error::InvalidFeatureMap(format!("feature {f} has no state")));
        }
        Ok(Self {
            feature_of,
            n_features,
        })
    }

    pub fn feature_of(&self, s: usize) -> usize {
        self.feature_of[s]
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_states(&self) -> usize {
        self.feature_of.len()
    }
}

/// Logit table `theta[feature, action]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    n_features: usize,
    n_actions: usize,
    theta: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn zeros(n_features: usize, n_actions: usize) -> Self {
        Self {
            n_features,
            n_actions,
            theta: vec![0.0; n_features * n_actions],
        }
    }

    pub fn from_flat(n_features: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n_features * n_actions {
            return Err(Error::Shape(format!(
                "theta has {} entries, expected {n_features}x{n_actions}",
                theta.len()
            )));
        }
        let p = Self {
            n_features,
            n_actions,
            theta,
        };
        p.check_finite()?;
        Ok(p)
    }

    /// Policy whose action distribution puts (numerically) all mass on
    /// `actions[f]` in every feature row.
    pub fn deterministic(actions: &[usize], n_actions: usize, margin: f64) -> Self {
        let mut p = Self::zeros(actions.len(), n_actions);
        for (f, &a) in actions.iter().enumerate() {
            p.theta[f * n_actions + a] = margin;
        }
        p
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn row(&self, f: usize) -> &[f64] {
        &self.theta[f * self.n_actions..(f + 1) * self.n_actions]
    }

    pub fn get(&self, f: usize, a: usize) -> f64 {
        self.theta[f * self.n_actions + a]
    }

    pub fn set(&mut self, f: usize, a: usize, v: f64) {
        self.theta[f * self.n_actions + a] = v;
    }

    /// `theta += step * direction`.
    pub fn ascend(&mut self, direction: &[f64], step: f64) {
        assert_eq!(direction.len(), self.theta.len());
        for (t, g) in self.theta.iter_mut().zip(direction) {
            *t += step * g;
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.theta.iter().position(|t| !t.is_finite()) {
            Some(i) => Err(Error::NonFiniteTheta {
                feature: i / self.n_actions,
                action: i % self.n_actions,
            }),
            None => Ok(()),
        }
    }

    /// Stable 64-bit FNV-1a fingerprint of the parameter bits.
    pub fn fingerprint(&self) -> u64 {
        crate::rng::fnv1a(self.theta.iter().flat_map(|t| t.to_bits().to_le_bytes()))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

fn check_shapes(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<()> {
    if fmap.n_states() != mdp.n_states() {
        return Err(Error::Shape(format!(
            "feature map covers {} states, MDP has {}",
            fmap.n_states(),
            mdp.n_states()
        )));
    }
    if policy.n_features() != fmap.n_features() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Shape(format!(
            "policy is {}x{}, expected {}x{}",
            policy.n_features(),
            policy.n_actions(),
            fmap.n_features(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// `pi(· | s)`: softmax of the feature row of `s`.
pub fn action_distribution(policy: &SoftmaxPolicy, fmap: &FeatureMap, s: usize) -> Result<Vec<f64>> {
    if s >= fmap.n_states() {
        return Err(Error::InvalidArgument(format!("state {s} out of range")));
    }
    let f = fmap.feature_of(s);
    let row = policy.row(f);
    if let Some(a) = row.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFiniteTheta { feature: f, action: a });
    }
    Ok(softmax(row))
}

/// Action probabilities for every state, `n_states × n_actions` row-major.
pub fn policy_table(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<Vec<f64>> {
    check_shapes(mdp, policy, fmap)?;
    policy.check_finite()?;
    let mut table = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
    for s in 0..mdp.n_states() {
        table.extend(softmax(policy.row(fmap.feature_of(s))));
    }
    Ok(table)
}

/// `P_pi[s, s'] = Σ_a pi(a|s) kernel[s, a, s']`.
pub fn induced_kernel_from_table(mdp: &TabularMdp, pi: &[f64]) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = pi[s * na + a];
            for (next, &k) in mdp.kernel_row(s, a).iter().enumerate() {
                p[(s, next)] += w * k;
            }
        }
    }
    p
}

/// `r_pi[s] = Σ_a pi(a|s) reward[s, a]`.
pub fn induced_reward_from_table(mdp: &TabularMdp, pi: &[f64]) -> DVector<f64> {
    let na = mdp.n_actions();
    DVector::from_iterator(
        mdp.n_states(),
        (0..mdp.n_states()).map(|s| (0..na).map(|a| pi[s * na + a] * mdp.reward(s, a)).sum()),
    )
}

pub fn induced_kernel(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<DMatrix<f64>> {
    Ok(induced_kernel_from_table(mdp, &policy_table(mdp, policy, fmap)?))
}

pub fn induced_reward(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<DVector<f64>> {
    Ok(induced_reward_from_table(mdp, &policy_table(mdp, policy, fmap)?))
}

/// Everything derived from one (MDP, policy) pair that the exact routines share.
#[derive(Debug, Clone)]
pub struct InducedChain {
    /// `pi(a|s)`, `n_states × n_actions` row-major.
    pub pi: Vec<f64>,
    pub kernel: DMatrix<f64>,
    pub reward: DVector<f64>,
}

impl InducedChain {
    pub fn new(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<Self> {
        let pi = policy_table(mdp, policy, fmap)?;
        Ok(Self {
            kernel: induced_kernel_from_table(mdp, &pi),
            reward: induced_reward_from_table(mdp, &pi),
            pi,
        })
    }

    /// `V_pi = (I - gamma P_pi)^{-1} r_pi`.
    pub fn values(&self, gamma: f64) -> Result<DVector<f64>> {
        linalg::solve(&linalg::resolvent_matrix(&self.kernel, gamma), &self.reward)
    }
}

/// `V_pi` for every state.
pub fn policy_values(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<Vec<f64>> {
    Ok(InducedChain::new(mdp, policy, fmap)?.values(mdp.gamma())?.as_slice().to_vec())
}

/// `J = αᵀ (I - γ P_pi)^{-1} r_pi`.
pub fn policy_return(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<f64> {
    let v = policy_values(mdp, policy, fmap)?;
    Ok(mdp.alpha().iter().zip(&v).map(|(a, v)| a * v).sum())
}

/// `Q(s, a) = r(s, a) + γ Σ_s' kernel[s, a, s'] V(s')`, row-major.
pub fn q_from_values(mdp: &TabularMdp, values: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = mdp.kernel_row(s, a).iter().zip(values).map(|(p, v)| p * v).sum();
            q.push(mdp.reward(s, a) + mdp.gamma() * ev);
        }
    }
    q
}

/// Exact `Q_pi`, `n_states × n_actions` row-major.
pub fn policy_q_values(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<Vec<f64>> {
    Ok(q_from_values(mdp, &policy_values(mdp, policy, fmap)?))
}

/// Result of [`value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub values: Vec<f64>,
    /// Greedy action per state, lowest index on ties.
    pub policy: Vec<usize>,
    pub iterations: usize,
}

impl OptimalSolution {
    /// `αᵀ V*`.
    pub fn start_value(&self, mdp: &TabularMdp) -> f64 {
        mdp.alpha().iter().zip(&self.values).map(|(a, v)| a * v).sum()
    }
}

fn greedy(q: &[f64], na: usize) -> (Vec<f64>, Vec<usize>) {
    q.chunks(na)
        .map(|row| {
            let mut best = 0;
            for a in 1..na {
                if row[a] > row[best] {
                    best = a;
                }
            }
            (row[best], best)
        })
        .unzip()
}

pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<OptimalSolution> {
    value_iteration_capped(mdp, tol, VALUE_ITERATION_CAP)
}

/// Iterates `V ← T*V` until `‖T*V − V‖∞ ≤ tol`; returns that `V` and the
/// greedy policy with respect to it.
pub fn value_iteration_capped(mdp: &TabularMdp, tol: f64, cap: usize) -> Result<OptimalSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let na = mdp.n_actions();
    let mut values = vec![0.0; mdp.n_states()];
    for iterations in 0..cap {
        let q = q_from_values(mdp, &values);
        let (next, policy) = greedy(&q, na);
        let residual = next
            .iter()
            .zip(&values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if residual <= tol {
            return Ok(OptimalSolution {
                values,
                policy,
                iterations,
            });
        }
        values = next;
    }
    Err(Error::NoConvergence {
        what: "value iteration",
        iters: cap,
        hint: String::new(),
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_actions() {
        let p = SoftmaxPolicy::zeros(1, 4);
        let d = action_distribution(&p, &FeatureMap::identity(1), 0).unwrap();
        assert_eq!(d, vec![0.25; 4]);
    }

    #[test]
    fn softmax_closed_form() {
        let p = SoftmaxPolicy::from_flat(1, 2, vec![3f64.ln(), 0.0]).unwrap();
        let d = action_distribution(&p, &FeatureMap::identity(1), 0).unwrap();
        assert!((d[0] - 0.75).abs() < 1e-15);
        assert!((d[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn random_rows_are_distributions() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let p = random_policy(&mut r, 1, 5, 20.0);
            let d = action_distribution(&p, &FeatureMap::identity(1), 0).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn non_finite_theta_is_rejected() {
        let mut p = SoftmaxPolicy::zeros(2, 2);
        p.set(1, 0, f64::NAN);
        let err = action_distribution(&p, &FeatureMap::identity(2), 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteTheta { feature: 1, action: 0 }));
        assert!(SoftmaxPolicy::from_flat(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn deterministic_policy_selects_kernel_row() {
        let mut r = rng(2);
        let mdp = random_mdp(&mut r, 4, 3, 0.9);
        let policy = SoftmaxPolicy::deterministic(&[2, 0, 1, 2], 3, 50.0);
        let p = induced_kernel(&mdp, &policy, &FeatureMap::identity(4)).unwrap();
        for (s, &a) in [2, 0, 1, 2].iter().enumerate() {
            for (next, k) in mdp.kernel_row(s, a).iter().enumerate() {
                assert!((p[(s, next)] - k).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_policy_averages_kernels() {
        let mut r = rng(3);
        let mdp = random_mdp(&mut r, 3, 2, 0.9);
        let p = induced_kernel(&mdp, &SoftmaxPolicy::zeros(3, 2), &FeatureMap::identity(3)).unwrap();
        let rp = induced_reward(&mdp, &SoftmaxPolicy::zeros(3, 2), &FeatureMap::identity(3)).unwrap();
        for s in 0..3 {
            for next in 0..3 {
                let mean = 0.5 * (mdp.kernel_row(s, 0)[next] + mdp.kernel_row(s, 1)[next]);
                assert!((p[(s, next)] - mean).abs() < 1e-15);
            }
            assert!((rp[s] - 0.5 * (mdp.reward(s, 0) + mdp.reward(s, 1))).abs() < 1e-15);
        }
    }

    #[test]
    fn induced_rows_are_stochastic() {
        let mut r = rng(4);
        for _ in 0..50 {
            let mdp = random_mdp(&mut r, 6, 3, 0.9);
            let policy = random_policy(&mut r, 6, 3, 3.0);
            let p = induced_kernel(&mdp, &policy, &FeatureMap::identity(6)).unwrap();
            for row in p.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_loop_return_is_geometric_series() {
        let mdp = self_loop(1.0, 0.5);
        let j = policy_return(&mdp, &SoftmaxPolicy::zeros(1, 1), &FeatureMap::identity(1)).unwrap();
        assert!((j - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_gamma_return_is_immediate_reward() {
        let mut r = rng(5);
        let mdp = random_mdp(&mut r, 5, 2, 1e-9);
        let policy = random_policy(&mut r, 5, 2, 1.0);
        let fmap = FeatureMap::identity(5);
        let j = policy_return(&mdp, &policy, &fmap).unwrap();
        let rp = induced_reward(&mdp, &policy, &fmap).unwrap();
        let immediate: f64 = mdp.alpha().iter().zip(rp.iter()).map(|(a, r)| a * r).sum();
        assert!((j - immediate).abs() < 1e-8);
    }

    #[test]
    fn resolvent_maps_ones_to_geometric_constant() {
        let mut r = rng(6);
        for _ in 0..20 {
            let mdp = random_mdp(&mut r, 5, 3, 0.95);
            let p = induced_kernel(&mdp, &random_policy(&mut r, 5, 3, 2.0), &FeatureMap::identity(5)).unwrap();
            let x = linalg::solve(&linalg::resolvent_matrix(&p, 0.95), &DVector::from_element(5, 1.0)).unwrap();
            for v in x.iter() {
                assert!((v - 20.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reward_shift_shifts_return() {
        let mut r = rng(7);
        for _ in 0..20 {
            let mdp = random_mdp(&mut r, 5, 2, 0.8);
            let policy = random_policy(&mut r, 5, 2, 2.0);
            let fmap = FeatureMap::identity(5);
            let j = policy_return(&mdp, &policy, &fmap).unwrap();
            let js = policy_return(&mdp.with_reward_shift(1.5), &policy, &fmap).unwrap();
            assert!((js - j - 1.5 / 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn value_iteration_self_loop() {
        let sol = value_iteration(&self_loop(1.0, 0.9), 1e-10).unwrap();
        assert!((sol.values[0] - 10.0).abs() < 1e-8);
    }

    #[test]
    fn value_iteration_zero_rewards_picks_action_zero() {
        let mut r = rng(8);
        let mdp = random_mdp(&mut r, 4, 3, 0.9);
        let zero = TabularMdp::new(
            4,
            3,
            mdp.kernel.clone(),
            vec![0.0; 12],
            mdp.alpha.clone(),
            0.9,
            vec![false; 4],
        )
        .unwrap();
        let sol = value_iteration(&zero, 1e-10).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
        assert_eq!(sol.policy, vec![0; 4]);
    }

    #[test]
    fn value_iteration_dominates_random_policies() {
        let mut r = rng(9);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let tol = 1e-9;
        let sol = value_iteration(&mdp, tol).unwrap();
        // ‖V − V*‖∞ ≤ γ tol / (1 − γ) when the residual is at most tol.
        let slack = tol / (1.0 - 0.9);
        for _ in 0..100 {
            let v = policy_values(&mdp, &random_policy(&mut r, 5, 3, 3.0), &FeatureMap::identity(5)).unwrap();
            for (vs, opt) in v.iter().zip(&sol.values) {
                assert!(*vs <= opt + slack);
            }
        }
    }

    #[test]
    fn value_iteration_rejects_bad_tolerance_and_cap() {
        assert!(value_iteration(&self_loop(1.0, 0.9), 0.0).is_err());
        let err = value_iteration_capped(&self_loop(1.0, 0.99), 1e-12, 10).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.9, vec![false]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![0.5], 0.9, vec![false]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0, vec![false]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 0.9, vec![true]).is_err());
        let bad_terminal = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            0.9,
            vec![false, true],
        );
        assert!(bad_terminal.is_err());
    }

    #[test]
    fn json_round_trip_uses_nested_arrays() {
        let mut r = rng(10);
        let mdp = random_mdp(&mut r, 3, 2, 0.9);
        let json = serde_json::to_value(&mdp).unwrap();
        assert_eq!(json["kernel"].as_array().unwrap().len(), 3);
        assert_eq!(json["kernel"][0].as_array().unwrap().len(), 2);
        assert_eq!(json["kernel"][0][0].as_array().unwrap().len(), 3);
        let back: TabularMdp = serde_json::from_value(json).unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn feature_map_must_be_surjective() {
        assert!(FeatureMap::new(vec![0, 0, 2], 3).is_err());
        assert!(FeatureMap::new(vec![0, 3], 3).is_err());
        assert!(FeatureMap::new(vec![0, 1, 1], 2).is_ok());
    }
}
