//! Three-time-scale actor-critic with a state-density regularizer.
//!
//! Every `update_period` environment steps the collected batch drives, in
//! order, the critic (rate `b_k`), the density estimator (rate `a_k`) and the
//! actor (rate `c_k`); the batch is then cleared.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::density::{self, DensitySample, LatentConfig, VaeParams};
use crate::dist::{empirical_entropy, Weighting};
use crate::env::{self, EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::exact_pg::RegKind;
use crate::mdp::{policy_table, softmax, FeatureMap, SoftmaxPolicy, TabularMdp};
use crate::rng::CounterRng;

/// How the regularizer enters the actor update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Subtract `λ ∇_θ` of the weighted ELBO, differentiated through the
    /// estimator's policy input.
    Pathwise,
    /// Critic learns from `r − λ log p̂(s)`.
    RewardBonus,
    /// Critic learns from `r + λ H(π(·|s))`.
    PolicyEntropyBaseline,
    #[default]
    #[serde(rename = "none")]
    Unregularized,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pathwise => "pathwise",
            Mode::RewardBonus => "reward_bonus",
            Mode::PolicyEntropyBaseline => "policy_entropy_baseline",
            Mode::Unregularized => "none",
        }
    }

    pub fn uses_density(self) -> bool {
        matches!(self, Mode::Pathwise | Mode::RewardBonus)
    }
}

/// `base · (k + 1)^(−exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    pub base: f64,
    pub exponent: f64,
}

impl LearningRateSchedule {
    pub const fn polynomial(base: f64, exponent: f64) -> Self {
        Self { base, exponent }
    }

    pub fn value(&self, k: usize) -> f64 {
        self.base * ((k + 1) as f64).powf(-self.exponent)
    }

    /// A base of zero is allowed and switches the corresponding update off.
    fn check(&self, name: &str) -> Result<()> {
        if !(self.base >= 0.0 && self.base.is_finite()) || !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule {name} needs base >= 0 and exponent > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Density (`a`), critic (`b`) and actor (`c`) step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub a: LearningRateSchedule,
    pub b: LearningRateSchedule,
    pub c: LearningRateSchedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            a: LearningRateSchedule::polynomial(0.5, 0.55),
            b: LearningRateSchedule::polynomial(0.5, 0.6),
            c: LearningRateSchedule::polynomial(0.1, 0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ScheduleReport {
    pub violations: Vec<String>,
}

impl ScheduleReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Schedule(self.violations))
        }
    }
}

/// Analytic check of the stochastic-approximation conditions for polynomial
/// schedules: each sum diverges (`p ≤ 1`), each sum of squares converges
/// (`p > ½`), and the actor is slowest (`p_c > p_a`, `p_c > p_b`).
pub fn validate_schedules(a: &LearningRateSchedule, b: &LearningRateSchedule, c: &LearningRateSchedule) -> ScheduleReport {
    let mut violations = Vec::new();
    for (name, s) in [("a", a), ("b", b), ("c", c)] {
        if let Err(e) = s.check(name) {
            violations.push(e.to_string());
            continue;
        }
        if s.exponent > 1.0 {
            violations.push(format!("Σ {name}_k < ∞"));
        }
        if s.exponent <= 0.5 {
            violations.push(format!("Σ {name}_k² = ∞"));
        }
    }
    if c.exponent <= a.exponent {
        violations.push("c_k/a_k ↛ 0".to_string());
    }
    if c.exponent <= b.exponent {
        violations.push("c_k/b_k ↛ 0".to_string());
    }
    ScheduleReport { violations }
}

/// Tabular action values `ψ[s, a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
}

impl CriticParams {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            q: vec![0.0; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Expected-SARSA target minus the current estimate.
    pub fn td_error(&self, step: &Step, reward: f64, next_probs: &[f64], gamma: f64) -> f64 {
        let bootstrap = if step.done {
            0.0
        } else {
            next_probs
                .iter()
                .zip(self.row(step.next_state))
                .map(|(p, q)| p * q)
                .sum::<f64>()
        };
        reward + gamma * bootstrap - self.get(step.state, step.action)
    }

    /// In-place TD(0) step; returns the TD error.
    pub fn td_update(&mut self, step: &Step, reward: f64, next_probs: &[f64], gamma: f64, rate: f64) -> f64 {
        let delta = self.td_error(step, reward, next_probs, gamma);
        self.q[step.state * self.n_actions + step.action] += rate * delta;
        delta
    }
}

/// `ψ′[s,a] = ψ[s,a] + b_k (r + γ Σ_a′ π(a′|s′) ψ[s′,a′] (1 − done) − ψ[s,a])`.
pub fn critic_td_update(psi: &CriticParams, step: &Step, next_probs: &[f64], gamma: f64, rate: f64) -> Result<CriticParams> {
    if !(rate >= 0.0) {
        return Err(Error::InvalidArgument(format!("critic rate {rate} must be >= 0")));
    }
    let mut next = psi.clone();
    next.td_update(step, step.reward, next_probs, gamma, rate);
    Ok(next)
}

/// A stored transition and its time index within the episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub step: Step,
    pub t: usize,
}

/// Density-estimator weight of a sample at time `t`.
pub fn density_weight(kind: RegKind, gamma: f64, t: usize) -> f64 {
    match kind {
        RegKind::Discounted => (1.0 - gamma) * gamma.powi(t as i32),
        RegKind::Stationary => 1.0,
    }
}

/// Noise seed for the `index`-th density evaluation of a given purpose.
fn derived_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    CounterRng::new(seed, purpose).bits(index)
}

const ACTOR_NOISE: u64 = 1 << 40;
const BONUS_NOISE: u64 = 2 << 40;
const DENSITY_NOISE: u64 = 3 << 40;
const METRIC_NOISE: u64 = 4 << 40;

/// Everything the actor update reads.
pub struct ActorInputs<'a> {
    pub batch: &'a [Sample],
    pub critic: &'a CriticParams,
    pub phi: Option<&'a VaeParams>,
    pub policy: &'a SoftmaxPolicy,
    pub fmap: &'a FeatureMap,
    pub lambda: f64,
    pub mode: Mode,
    pub kind: RegKind,
    pub gamma: f64,
    pub seed: u64,
}

/// Batch-mean score-function gradient with advantage `Q(s,a) − Σ_b π(b|s) Q(s,b)`;
/// in pathwise mode, minus `λ` times the ELBO gradient through the policy input.
pub fn actor_gradient(inputs: &ActorInputs<'_>) -> Result<Vec<f64>> {
    let policy = inputs.policy;
    let na = policy.n_actions();
    if inputs.critic.n_actions != na || inputs.critic.n_states != inputs.fmap.n_states() {
        return Err(Error::Shape("critic does not match the policy".into()));
    }
    let mut grad = vec![0.0; policy.flat().len()];
    if inputs.batch.is_empty() {
        return Ok(grad);
    }
    let n = inputs.batch.len() as f64;
    for sample in inputs.batch {
        let s = sample.step.state;
        let f = inputs.fmap.feature_of(s);
        let probs = softmax(policy.row(f));
        let q = inputs.critic.row(s);
        let baseline: f64 = probs.iter().zip(q).map(|(p, q)| p * q).sum();
        let adv = q[sample.step.action] - baseline;
        for (b, p) in probs.iter().enumerate() {
            let indicator = if b == sample.step.action { 1.0 } else { 0.0 };
            grad[f * na + b] += (indicator - p) * adv / n;
        }
    }
    if inputs.mode == Mode::Pathwise && inputs.lambda != 0.0 {
        let phi = inputs
            .phi
            .ok_or_else(|| Error::InvalidArgument("pathwise mode needs a density estimator".into()))?;
        let theta = policy.flat();
        for (i, sample) in inputs.batch.iter().enumerate() {
            let w = density_weight(inputs.kind, inputs.gamma, sample.t);
            let seed = derived_seed(inputs.seed, ACTOR_NOISE, i as u64);
            let (_, cache) = density::elbo(phi, theta, sample.step.state, w, seed)?;
            let (_, d_theta) = density::backprop(phi, &cache);
            for (g, d) in grad.iter_mut().zip(d_theta) {
                *g -= inputs.lambda * d / n;
            }
        }
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteTheta {
            feature: i / na,
            action: i % na,
        });
    }
    Ok(grad)
}

fn policy_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Reward the critic learns from under each mode.
pub fn shaped_reward(mode: Mode, lambda: f64, reward: f64, probs: &[f64], log_density: impl FnOnce() -> Result<f64>) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(reward);
    }
    Ok(match mode {
        Mode::RewardBonus => reward - lambda * log_density()?,
        Mode::PolicyEntropyBaseline => reward + lambda * policy_entropy(probs),
        Mode::Pathwise | Mode::Unregularized => reward,
    })
}

fn default_period() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub kind: RegKind,
    #[serde(default)]
    pub schedules: Schedules,
    /// Steps between updates; the batch holds exactly these steps.
    #[serde(default = "default_period")]
    pub update_period: usize,
    pub episodes: usize,
    /// Overrides the environment's episode cap.
    #[serde(default)]
    pub t_max: Option<usize>,
    /// Stops training after this many environment steps in total.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latent: LatentConfig,
    /// Decays `λ` linearly to zero over the episodes.
    #[serde(default)]
    pub lambda_decay: bool,
    /// Episodes between stored checkpoints.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(env: EnvSpec, episodes: usize) -> Self {
        Self {
            env,
            lambda: 0.0,
            mode: Mode::Unregularized,
            kind: RegKind::Discounted,
            schedules: Schedules::default(),
            update_period: 1,
            episodes,
            t_max: None,
            max_steps: None,
            seed: 0,
            latent: LatentConfig::default(),
            lambda_decay: false,
            checkpoint_every: None,
        }
    }

    /// Every problem found, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.env.validate() {
            out.push(format!("env: {e}"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda: must be finite and >= 0, got {}", self.lambda));
        }
        if self.lambda > 0.0 && self.mode == Mode::Unregularized {
            out.push("mode: lambda > 0 requires a regularizing mode".into());
        }
        if self.update_period == 0 {
            out.push("update_period: must be >= 1".into());
        }
        if self.episodes == 0 {
            out.push("episodes: must be >= 1".into());
        }
        if self.t_max == Some(0) {
            out.push("t_max: must be >= 1".into());
        }
        if self.max_steps == Some(0) {
            out.push("max_steps: must be >= 1".into());
        }
        if self.checkpoint_every == Some(0) {
            out.push("checkpoint_every: must be >= 1".into());
        }
        if let Err(e) = self.latent.validate() {
            out.push(format!("latent: {e}"));
        }
        let s = &self.schedules;
        out.extend(
            validate_schedules(&s.a, &s.b, &s.c)
                .violations
                .into_iter()
                .map(|v| format!("schedules: {v}")),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn lambda_at(&self, episode: usize) -> f64 {
        if self.lambda_decay {
            self.lambda * (1.0 - episode as f64 / self.episodes as f64)
        } else {
            self.lambda
        }
    }
}

/// One row of the per-episode metrics trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub empirical_entropy_uniform: f64,
    pub empirical_entropy_discounted: f64,
    pub distinct_states_so_far: usize,
    pub a_k: f64,
    pub b_k: f64,
    pub c_k: f64,
}

pub const METRICS_HEADER: &str =
    "episode,steps,return,empirical_entropy_uniform,empirical_entropy_discounted,distinct_states_so_far,a_k,b_k,c_k";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.steps,
            r.ret,
            r.empirical_entropy_uniform,
            r.empirical_entropy_discounted,
            r.distinct_states_so_far,
            r.a_k,
            r.b_k,
            r.c_k
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: usize,
    pub theta: Vec<f64>,
    pub critic: CriticParams,
    pub phi: VaeParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<MetricRow>,
    /// Visit counts over all `S_t` seen, including final next-states.
    pub visits: Vec<u64>,
    pub total_steps: usize,
    pub policy: SoftmaxPolicy,
    pub critic: CriticParams,
    pub phi: VaeParams,
    pub checkpoints: Vec<Checkpoint>,
    /// Set when training stopped early on a numerical failure.
    pub failure: Option<String>,
}

impl TrainOutcome {
    pub fn distinct_states(&self) -> usize {
        self.visits.iter().filter(|&&v| v > 0).count()
    }

    /// Mean return over the last `n` episodes.
    pub fn final_return(&self, n: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(|r| r.ret).sum::<f64>() / tail.len() as f64
    }
}

struct Learner<'a> {
    cfg: &'a TrainConfig,
    mdp: &'a TabularMdp,
    fmap: &'a FeatureMap,
    policy: SoftmaxPolicy,
    critic: CriticParams,
    phi: VaeParams,
    k: usize,
}

impl Learner<'_> {
    fn update(&mut self, batch: &[Sample], lambda: f64) -> Result<()> {
        let s = &self.cfg.schedules;
        let (a_k, b_k, c_k) = (s.a.value(self.k), s.b.value(self.k), s.c.value(self.k));
        let gamma = self.mdp.gamma();
        let na = self.mdp.n_actions();
        let mode = self.cfg.mode;
        let seed = derived_seed(self.cfg.seed, self.k as u64, 0);
        let pi = policy_table(self.mdp, &self.policy, self.fmap)?;

        let theta = self.policy.flat().to_vec();
        // J + λH(d̄) is a discounted return with per-step reward
        // r − λ(1 − γ) log d̄(s), so discounted bonuses carry 1 − γ.
        let bonus_scale = match self.cfg.kind {
            RegKind::Discounted => 1.0 - gamma,
            RegKind::Stationary => 1.0,
        };
        let mut log_p = Vec::new();
        if mode == Mode::RewardBonus && lambda != 0.0 {
            for (i, sample) in batch.iter().enumerate() {
                let noise = derived_seed(seed, BONUS_NOISE, i as u64);
                log_p.push(density::log_density(&self.phi, &theta, sample.step.state, noise)?);
            }
        }
        let mut rewards = Vec::with_capacity(batch.len());
        for (i, sample) in batch.iter().enumerate() {
            let st = &sample.step;
            let probs = &pi[st.state * na..(st.state + 1) * na];
            rewards.push(shaped_reward(mode, lambda * bonus_scale, st.reward, probs, || Ok(log_p[i]))?);
        }
        for (sample, reward) in batch.iter().zip(rewards) {
            let st = &sample.step;
            let next = &pi[st.next_state * na..(st.next_state + 1) * na];
            self.critic.td_update(st, reward, next, gamma, b_k);
        }
        if let Some(i) = self.critic.q.iter().position(|q| !q.is_finite()) {
            return Err(Error::NonFinite(format!("critic entry {i}")));
        }

        if a_k > 0.0 {
            // Self-normalized weights keep the step size independent of how
            // small the discount weights get late in an episode.
            let raw: Vec<f64> = batch.iter().map(|x| density_weight(self.cfg.kind, gamma, x.t)).collect();
            let mean_w = raw.iter().sum::<f64>() / raw.len() as f64;
            let dens: Vec<DensitySample> = batch
                .iter()
                .zip(&raw)
                .map(|(x, w)| DensitySample {
                    theta: &theta,
                    state: x.step.state,
                    weight: w / mean_w,
                })
                .collect();
            self.phi = density::update_phi(&self.phi, &dens, a_k, derived_seed(seed, DENSITY_NOISE, 0))?;
            if !self.phi.is_finite() {
                return Err(Error::NonFinite("density estimator parameters".into()));
            }
        }

        if c_k > 0.0 {
            let grad = actor_gradient(&ActorInputs {
                batch,
                critic: &self.critic,
                phi: Some(&self.phi),
                policy: &self.policy,
                fmap: self.fmap,
                lambda,
                mode,
                kind: self.cfg.kind,
                gamma,
                seed,
            })?;
            self.policy.ascend(&grad, c_k);
            self.policy.check_finite()?;
        }
        self.k += 1;
        Ok(())
    }

    fn log_density(&self, s: usize, index: u64) -> f64 {
        density::log_density(&self.phi, self.policy.flat(), s, derived_seed(self.cfg.seed, METRIC_NOISE, index))
            .unwrap_or(f64::NAN)
    }
}

/// Runs the actor-critic loop. Numerical failures end training early and
/// are reported in [`TrainOutcome::failure`] with the trace so far.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let environment = env::build(&cfg.env)?;
    train_on(cfg, &environment)
}

/// As [`train`], on an already built environment.
pub fn train_on(cfg: &TrainConfig, environment: &Environment) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mdp = &environment.mdp;
    let fmap = &environment.fmap;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let t_max = cfg.t_max.unwrap_or(environment.t_max);
    let gamma = mdp.gamma();
    let policy = SoftmaxPolicy::zeros(fmap.n_features(), na);
    let phi = density::init(cfg.latent, policy.flat().len(), ns, cfg.seed)?;
    let mut learner = Learner {
        cfg,
        mdp,
        fmap,
        policy,
        critic: CriticParams::zeros(ns, na),
        phi,
        k: 0,
    };

    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut visits = vec![0u64; ns];
    let mut checkpoints = Vec::new();
    let mut batch: Vec<Sample> = Vec::with_capacity(cfg.update_period);
    let mut total_steps = 0usize;
    let mut failure = None;
    let metric_index = std::cell::Cell::new(0u64);

    'episodes: for episode in 0..cfg.episodes {
        let lambda = cfg.lambda_at(episode);
        let rng = CounterRng::new(cfg.seed, episode as u64);
        let mut s = env::draw_start(mdp, &rng);
        let mut states = vec![s];
        let mut ret = 0.0;
        visits[s] += 1;
        let mut budget_hit = false;
        for t in 0..t_max {
            let probs = softmax(learner.policy.row(fmap.feature_of(s)));
            let a = rng.categorical(env::action_counter(t), &probs);
            let next = env::draw_next(mdp, s, a, &rng, t);
            let step = Step {
                state: s,
                action: a,
                reward: mdp.reward(s, a),
                next_state: next,
                done: mdp.is_terminal(next),
            };
            ret += step.reward;
            visits[next] += 1;
            states.push(next);
            batch.push(Sample { step, t });
            total_steps += 1;
            if batch.len() == cfg.update_period {
                if let Err(e) = learner.update(&batch, lambda) {
                    failure = Some(format!("episode {episode}, step {t}: {e}"));
                }
                batch.clear();
            }
            if failure.is_some() {
                break;
            }
            if cfg.max_steps.is_some_and(|m| total_steps >= m) {
                budget_hit = true;
                break;
            }
            if step.done {
                break;
            }
            s = next;
        }

        let entropy_of = |weighting| {
            empirical_entropy(
                &states,
                |s| {
                    metric_index.set(metric_index.get() + 1);
                    learner.log_density(s, metric_index.get())
                },
                weighting,
                gamma,
            )
            .unwrap_or(f64::NAN)
        };
        let entropy_uniform = entropy_of(Weighting::Uniform);
        let entropy_discounted = entropy_of(Weighting::Discounted);
        let sch = &cfg.schedules;
        rows.push(MetricRow {
            episode,
            steps: states.len() - 1,
            ret,
            empirical_entropy_uniform: entropy_uniform,
            empirical_entropy_discounted: entropy_discounted,
            distinct_states_so_far: visits.iter().filter(|&&v| v > 0).count(),
            a_k: sch.a.value(learner.k),
            b_k: sch.b.value(learner.k),
            c_k: sch.c.value(learner.k),
        });
        if cfg.checkpoint_every.is_some_and(|n| (episode + 1) % n == 0) {
            checkpoints.push(Checkpoint {
                episode,
                theta: learner.policy.flat().to_vec(),
                critic: learner.critic.clone(),
                phi: learner.phi.clone(),
            });
        }
        if failure.is_some() || budget_hit {
            break 'episodes;
        }
    }

    Ok(TrainOutcome {
        rows,
        visits,
        total_steps,
        policy: learner.policy,
        critic: learner.critic,
        phi: learner.phi,
        checkpoints,
        failure,
    })
}
