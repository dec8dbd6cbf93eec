//! Exact regularized objective `J̃(θ) = J(θ) + λ H(d_θ)` and its gradient.
//!
//! Both the return and the entropy terms are differentiated through the
//! resolvent of the induced chain. For a softmax policy every term reduces to
//!
//! ```text
//! ∂/∂θ[f, b] = Σ_{s : feature(s) = f} w(s) π(b|s) (G(s, b) − Σ_a π(a|s) G(s, a))
//! ```
//!
//! for a state weight `w` and an action score `G`, which is what
//! [`accumulate_softmax`] assembles.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::dist::{self, entropy_of};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{induced_reward_from_table, policy_table, q_from_values, FeatureMap, SoftmaxPolicy, TabularMdp};

/// Which state distribution the entropy bonus is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// Normalised discounted occupancy `d̄`.
    #[default]
    Discounted,
    /// Stationary law of the restart-augmented chain.
    Stationary,
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Default step size for the exact ascent runs.
pub const DEFAULT_LR: f64 = 0.01;

/// Distribution of `kind` together with the data its gradient needs.
struct Occupancy {
    probs: Vec<f64>,
    /// States that carry entropy: reachable (discounted) or recurrent
    /// (stationary).
    support: Vec<bool>,
    kernel: DMatrix<f64>,
}

fn occupancy(mdp: &TabularMdp, pi: &[f64], kind: RegKind) -> Result<Occupancy> {
    match kind {
        RegKind::Discounted => {
            let kernel = dist::chain_kernel(mdp, pi, false);
            let d = dist::discounted_from_kernel(mdp, &kernel)?;
            Ok(Occupancy {
                probs: d.probs,
                support: mdp.reachable_from_start(),
                kernel,
            })
        }
        RegKind::Stationary => {
            let kernel = dist::chain_kernel(mdp, pi, true);
            let support = recurrent_class(&kernel, mdp.alpha())?;
            let mut probs = dist::stationary_of(&kernel, mdp.alpha())?;
            for (p, &live) in probs.iter_mut().zip(&support) {
                if !live {
                    *p = 0.0;
                }
            }
            let z: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= z);
            Ok(Occupancy {
                probs,
                support,
                kernel,
            })
        }
    }
}

/// The unique closed class reachable from `start`.
fn recurrent_class(p: &DMatrix<f64>, start: &[f64]) -> Result<Vec<bool>> {
    let n = p.nrows();
    let live = dist::reachable(p, start);
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for s in (0..n).filter(|&s| live[s]) {
        for next in 0..n {
            if p[(s, next)] > 0.0 {
                graph.add_edge(nodes[s], nodes[next], ());
            }
        }
    }
    let mut closed = Vec::new();
    for scc in tarjan_scc(&graph) {
        if !live[scc[0].index()] {
            continue;
        }
        let members: Vec<usize> = scc.iter().map(|n| n.index()).collect();
        let leaks = members
            .iter()
            .any(|&s| (0..n).any(|next| p[(s, next)] > 0.0 && !members.contains(&next)));
        if !leaks {
            closed.push(members);
        }
    }
    if closed.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "stationary regularization needs one closed class reachable from the start, found {}",
            closed.len()
        )));
    }
    let mut support = vec![false; n];
    for s in &closed[0] {
        support[*s] = true;
    }
    Ok(support)
}

/// `J(θ) + λ H(d)`.
pub fn regularized_objective(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    lambda: f64,
    kind: RegKind,
) -> Result<f64> {
    Ok(objective_parts(mdp, policy, fmap, lambda, kind)?.j_tilde)
}

/// The pieces of `J̃` at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub j: f64,
    pub entropy: f64,
    pub j_tilde: f64,
}

pub fn objective_parts(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    lambda: f64,
    kind: RegKind,
) -> Result<ObjectiveParts> {
    check_lambda(lambda)?;
    let pi = policy_table(mdp, policy, fmap)?;
    let j = start_value(mdp, &pi)?;
    let entropy = entropy_of(&occupancy(mdp, &pi, kind)?.probs);
    let j_tilde = if lambda == 0.0 { j } else { j + lambda * entropy };
    Ok(ObjectiveParts { j, entropy, j_tilde })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda {lambda} must be finite and >= 0")))
    }
}

fn start_value(mdp: &TabularMdp, pi: &[f64]) -> Result<f64> {
    let p = dist::chain_kernel(mdp, pi, false);
    let r = induced_reward_from_table(mdp, pi);
    let v = linalg::solve(&linalg::resolvent_matrix(&p, mdp.gamma()), &r)?;
    Ok(mdp.alpha().iter().zip(v.iter()).map(|(a, v)| a * v).sum())
}

/// Adds `w(s) π(b|s) (G(s, b) − E_π G(s, ·))` into `grad[feature(s), b]`.
pub(crate) fn accumulate_softmax(
    grad: &mut [f64],
    fmap: &FeatureMap,
    pi: &[f64],
    na: usize,
    weight: impl Fn(usize) -> f64,
    score: impl Fn(usize, usize) -> f64,
) {
    for s in 0..fmap.n_states() {
        let w = weight(s);
        if w == 0.0 {
            continue;
        }
        let probs = &pi[s * na..(s + 1) * na];
        let scores: Vec<f64> = (0..na).map(|a| score(s, a)).collect();
        let mean: f64 = probs.iter().zip(&scores).map(|(p, g)| p * g).sum();
        let f = fmap.feature_of(s);
        for b in 0..na {
            grad[f * na + b] += w * probs[b] * (scores[b] - mean);
        }
    }
}

fn expected_next(mdp: &TabularMdp, kernel_row: impl Fn(usize, usize) -> Vec<f64>, u: &DVector<f64>) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            out.push(kernel_row(s, a).iter().zip(u.iter()).map(|(p, x)| p * x).sum());
        }
    }
    out
}

/// `∇_θ J(θ)` alone.
pub fn return_gradient(mdp: &TabularMdp, policy: &SoftmaxPolicy, fmap: &FeatureMap) -> Result<Vec<f64>> {
    analytic_gradient(mdp, policy, fmap, 0.0, RegKind::Discounted)
}

/// `∇_θ J̃(θ) = ∇J + λ ∇H(d)`.
///
/// `∇J` uses the unnormalised occupancy `αᵀM` and `Q_π`. The discounted
/// entropy term uses `∇d̄ᵀ = γ d̄ᵀ (∂P) M`, contracted with `1 + log d̄` through
/// one transposed solve; the stationary term uses the fundamental matrix
/// `(I − P + 1dᵀ)^{-1}` of the restart-augmented chain on its reachable block.
pub fn analytic_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    lambda: f64,
    kind: RegKind,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let pi = policy_table(mdp, policy, fmap)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let p = dist::chain_kernel(mdp, &pi, false);
    let resolvent = linalg::resolvent_matrix(&p, gamma);
    let lu = resolvent.clone().lu();
    let solve = |b: &DVector<f64>| -> Result<DVector<f64>> {
        let x = lu.solve(b).ok_or_else(|| Error::Solve("singular I - γP".into()))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solve("non-finite solution".into()));
        }
        Ok(x)
    };

    let values = solve(&induced_reward_from_table(mdp, &pi))?;
    let q = q_from_values(mdp, values.as_slice());
    let occupancy_weights = linalg::solve_transpose(&resolvent, &DVector::from_column_slice(mdp.alpha()))?;

    let mut grad = vec![0.0; fmap.n_features() * na];
    accumulate_softmax(&mut grad, fmap, &pi, na, |s| occupancy_weights[s], |s, a| q[s * na + a]);

    if lambda == 0.0 {
        return Ok(grad);
    }

    let occ = occupancy(mdp, &pi, kind)?;
    let mut log_term = DVector::zeros(ns);
    for s in 0..ns {
        if occ.support[s] {
            if occ.probs[s] <= 0.0 {
                return Err(Error::SingularEntropy(s));
            }
            log_term[s] = 1.0 + occ.probs[s].ln();
        }
    }
    let mut entropy_grad = vec![0.0; grad.len()];
    match kind {
        RegKind::Discounted => {
            let u = solve(&log_term)?;
            let next = expected_next(mdp, |s, a| mdp.kernel_row(s, a).to_vec(), &u);
            accumulate_softmax(
                &mut entropy_grad,
                fmap,
                &pi,
                na,
                |s| -gamma * occ.probs[s],
                |s, a| next[s * na + a],
            );
        }
        RegKind::Stationary => {
            let live: Vec<usize> = dist::reachable(&occ.kernel, mdp.alpha())
                .iter()
                .enumerate()
                .filter_map(|(s, &r)| r.then_some(s))
                .collect();
            let m = live.len();
            let mut fundamental = DMatrix::zeros(m, m);
            for (i, &si) in live.iter().enumerate() {
                for (j, &sj) in live.iter().enumerate() {
                    let eye = if i == j { 1.0 } else { 0.0 };
                    fundamental[(i, j)] = eye - occ.kernel[(si, sj)] + occ.probs[sj];
                }
            }
            let g = DVector::from_iterator(m, live.iter().map(|&s| log_term[s]));
            let u_live = linalg::solve(&fundamental, &g)?;
            let mut u = DVector::zeros(ns);
            for (i, &s) in live.iter().enumerate() {
                u[s] = u_live[i];
            }
            let restart_row = |s: usize, a: usize| {
                if mdp.is_terminal(s) {
                    mdp.alpha().to_vec()
                } else {
                    mdp.kernel_row(s, a).to_vec()
                }
            };
            let next = expected_next(mdp, restart_row, &u);
            accumulate_softmax(
                &mut entropy_grad,
                fmap,
                &pi,
                na,
                |s| -occ.probs[s],
                |s, a| next[s * na + a],
            );
        }
    }
    for (g, e) in grad.iter_mut().zip(&entropy_grad) {
        *g += lambda * e;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    Ok(grad)
}

/// Central differences of [`regularized_objective`], one coordinate at a time.
pub fn finite_diff_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    lambda: f64,
    kind: RegKind,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    central_differences(policy, h, |p| regularized_objective(mdp, p, fmap, lambda, kind))
}

/// Central differences of any scalar functional of the policy table.
pub fn central_differences(
    policy: &SoftmaxPolicy,
    h: f64,
    f: impl Fn(&SoftmaxPolicy) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = policy.clone();
    let mut grad = Vec::with_capacity(policy.flat().len());
    for i in 0..policy.flat().len() {
        let base = policy.flat()[i];
        probe.flat_mut()[i] = base + h;
        let up = f(&probe)?;
        probe.flat_mut()[i] = base - h;
        let down = f(&probe)?;
        probe.flat_mut()[i] = base;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// One row of an ascent trace, evaluated at the iterate before its update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPgRecord {
    pub iteration: usize,
    pub j: f64,
    pub entropy: f64,
    pub j_tilde: f64,
    pub grad_inf_norm: f64,
    pub theta_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPgTrace {
    pub records: Vec<ExactPgRecord>,
    pub final_policy: SoftmaxPolicy,
    /// Set when the run stopped early on a numerical failure.
    pub failure: Option<String>,
}

impl ExactPgTrace {
    /// First iteration whose `J` is at least `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.j >= target).map(|r| r.iteration)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,J,H,J_tilde,grad_inf_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.j, r.entropy, r.j_tilde, r.grad_inf_norm
            ));
        }
        out
    }
}

/// Plain gradient ascent `θ ← θ + lr ∇J̃(θ)` for `iters` steps.
pub fn run_exact_pg(
    mdp: &TabularMdp,
    theta0: &SoftmaxPolicy,
    fmap: &FeatureMap,
    lambda: f64,
    lr: f64,
    iters: usize,
    kind: RegKind,
) -> Result<ExactPgTrace> {
    if !(lr > 0.0) || iters == 0 {
        return Err(Error::InvalidArgument("need lr > 0 and iters >= 1".into()));
    }
    let mut policy = theta0.clone();
    let mut records = Vec::with_capacity(iters);
    let mut failure = None;
    for iteration in 0..iters {
        let step = objective_parts(mdp, &policy, fmap, lambda, kind).and_then(|parts| {
            if !parts.j_tilde.is_finite() {
                return Err(Error::NonFinite(format!("objective at iteration {iteration}")));
            }
            Ok((parts, analytic_gradient(mdp, &policy, fmap, lambda, kind)?))
        });
        let (parts, grad) = match step {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        records.push(ExactPgRecord {
            iteration,
            j: parts.j,
            entropy: parts.entropy,
            j_tilde: parts.j_tilde,
            grad_inf_norm: linalg::inf_norm(&grad),
            theta_hash: policy.fingerprint(),
        });
        policy.ascend(&grad, lr);
    }
    Ok(ExactPgTrace {
        records,
        final_policy: policy,
        failure,
    })
}
