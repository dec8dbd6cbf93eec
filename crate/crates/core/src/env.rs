//! The environment catalog and the rollout sampler.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{policy_table, FeatureMap, SoftmaxPolicy, TabularMdp};
use crate::rng::{sample_index, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    TwoState,
    Ring,
    Chain,
    GridworldOpen,
    GridworldSlits,
    WindyGridworld,
    FrozenLake,
    AliasedCounterexample,
}

impl EnvName {
    pub const ALL: [EnvName; 8] = [
        EnvName::TwoState,
        EnvName::Ring,
        EnvName::Chain,
        EnvName::GridworldOpen,
        EnvName::GridworldSlits,
        EnvName::WindyGridworld,
        EnvName::FrozenLake,
        EnvName::AliasedCounterexample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::TwoState => "two_state",
            EnvName::Ring => "ring",
            EnvName::Chain => "chain",
            EnvName::GridworldOpen => "gridworld_open",
            EnvName::GridworldSlits => "gridworld_slits",
            EnvName::WindyGridworld => "windy_gridworld",
            EnvName::FrozenLake => "frozen_lake",
            EnvName::AliasedCounterexample => "aliased_counterexample",
        }
    }

    /// `(name, min, max, default)` for every parameter this environment accepts.
    pub fn param_ranges(self) -> Vec<(&'static str, f64, f64, f64)> {
        let mut ranges = match self {
            EnvName::TwoState => vec![("t_max", 1.0, 1e6, 100.0)],
            EnvName::Ring => vec![
                ("n", 3.0, 1000.0, 8.0),
                ("noise", 0.0, 1.0, 1.0),
                ("t_max", 1.0, 1e6, 100.0),
            ],
            EnvName::Chain => vec![("n", 2.0, 1000.0, 4.0), ("t_max", 1.0, 1e6, 100.0)],
            EnvName::GridworldOpen => vec![
                ("rows", 2.0, 50.0, 5.0),
                ("cols", 2.0, 50.0, 5.0),
                ("slip", 0.0, 0.99, 0.0),
                ("goal_reward", -1e6, 1e6, 2.0),
                ("goal_terminal", 0.0, 1.0, 0.0),
                ("distractor_reward", -1e6, 1e6, 0.05),
                ("t_max", 1.0, 1e6, 100.0),
            ],
            EnvName::GridworldSlits => vec![("t_max", 1.0, 1e6, 100.0)],
            EnvName::WindyGridworld => vec![("t_max", 1.0, 1e6, 200.0)],
            EnvName::FrozenLake => vec![("slippery", 0.0, 1.0, 1.0), ("t_max", 1.0, 1e6, 100.0)],
            EnvName::AliasedCounterexample => vec![("t_max", 1.0, 1e6, 100.0)],
        };
        let gamma = match self {
            EnvName::GridworldSlits | EnvName::FrozenLake | EnvName::WindyGridworld => 0.99,
            _ => 0.9,
        };
        ranges.push(("gamma", 1e-9, 0.999_999, gamma));
        ranges.push(("seed", 0.0, u32::MAX as f64, 0.0));
        ranges
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Environment identifier plus named scalar parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: EnvName,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl EnvSpec {
    pub fn new(name: EnvName) -> Self {
        Self {
            name,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Checks every parameter against [`EnvName::param_ranges`].
    pub fn validate(&self) -> Result<()> {
        let ranges = self.name.param_ranges();
        let mut problems = Vec::new();
        for (key, value) in &self.params {
            match ranges.iter().find(|(k, ..)| k == key) {
                None => problems.push(format!(
                    "unknown parameter `{key}` for {}; valid: {}",
                    self.name,
                    describe(&ranges)
                )),
                Some(&(_, lo, hi, _)) if !(*value >= lo && *value <= hi) => {
                    problems.push(format!("`{key}` = {value} outside [{lo}, {hi}]"))
                }
                _ => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidEnv(problems.join("; ")))
        }
    }

    pub fn param(&self, key: &str) -> f64 {
        self.params.get(key).copied().unwrap_or_else(|| {
            self.name
                .param_ranges()
                .into_iter()
                .find(|(k, ..)| *k == key)
                .map(|(.., d)| d)
                .unwrap_or_else(|| panic!("{} has no parameter {key}", self.name))
        })
    }

    fn int_param(&self, key: &str) -> Result<usize> {
        let v = self.param(key);
        if v.fract() != 0.0 {
            return Err(Error::InvalidEnv(format!("`{key}` must be an integer, got {v}")));
        }
        Ok(v as usize)
    }

    pub fn gamma(&self) -> f64 {
        self.param("gamma")
    }

    /// Episode cap.
    pub fn t_max(&self) -> usize {
        self.param("t_max") as usize
    }
}

fn describe(ranges: &[(&str, f64, f64, f64)]) -> String {
    ranges
        .iter()
        .map(|(k, lo, hi, d)| format!("{k} in [{lo}, {hi}] (default {d})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Row-major grid geometry. State `s` sits at `(s / cols, s % cols)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub walls: Vec<bool>,
}

impl GridLayout {
    pub fn open(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            walls: vec![false; rows * cols],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s / self.cols, s % self.cols)
    }

    pub fn state_at(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn is_wall(&self, s: usize) -> bool {
        self.walls[s]
    }

    /// Target of a unit move, staying put at edges and walls.
    fn step(&self, s: usize, (dr, dc): (isize, isize)) -> usize {
        let (r, c) = self.cell(s);
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
            return s;
        }
        let next = self.state_at(nr as usize, nc as usize);
        if self.walls[next] {
            s
        } else {
            next
        }
    }
}

/// An environment ready for use.
#[derive(Debug, Clone)]
pub struct Environment {
    pub name: EnvName,
    pub mdp: TabularMdp,
    pub fmap: FeatureMap,
    pub layout: Option<GridLayout>,
    pub t_max: usize,
}

// Grid moves in (row, col) offsets; row 0 is the top.
const UP: (isize, isize) = (-1, 0);
const RIGHT: (isize, isize) = (0, 1);
const DOWN: (isize, isize) = (1, 0);
const LEFT: (isize, isize) = (0, -1);
/// Action order for the gridworlds: up, right, down, left.
const COMPASS: [(isize, isize); 4] = [UP, RIGHT, DOWN, LEFT];
/// FrozenLake action order: left, down, right, up.
const LAKE: [(isize, isize); 4] = [LEFT, DOWN, RIGHT, UP];

/// Accumulates a kernel/reward pair before validation.
struct Builder {
    ns: usize,
    na: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    terminal: Vec<bool>,
}

impl Builder {
    fn new(ns: usize, na: usize) -> Self {
        Self {
            ns,
            na,
            kernel: vec![0.0; ns * na * ns],
            reward: vec![0.0; ns * na],
            terminal: vec![false; ns],
        }
    }

    fn add(&mut self, s: usize, a: usize, next: usize, p: f64) {
        self.kernel[(s * self.na + a) * self.ns + next] += p;
    }

    fn set_reward(&mut self, s: usize, a: usize, r: f64) {
        self.reward[s * self.na + a] = r;
    }

    fn absorbing(&mut self, s: usize) {
        for a in 0..self.na {
            let row = (s * self.na + a) * self.ns;
            self.kernel[row..row + self.ns].fill(0.0);
            self.kernel[row + s] = 1.0;
            self.reward[s * self.na + a] = 0.0;
        }
    }

    fn terminal(&mut self, s: usize) {
        self.absorbing(s);
        self.terminal[s] = true;
    }

    /// Sets `r(s, a)` to the probability of landing in `goal`.
    fn goal_reward(&mut self, goal: usize) {
        for s in (0..self.ns).filter(|&s| !self.terminal[s]) {
            for a in 0..self.na {
                let p = self.kernel[(s * self.na + a) * self.ns + goal];
                self.reward[s * self.na + a] = p;
            }
        }
    }

    fn finish(self, alpha: Vec<f64>, gamma: f64) -> Result<TabularMdp> {
        TabularMdp::new(self.ns, self.na, self.kernel, self.reward, alpha, gamma, self.terminal)
    }
}

fn delta(n: usize, s: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[s] = 1.0;
    v
}

/// Builds the MDP, feature map and (for grids) layout named by `spec`.
pub fn build(spec: &EnvSpec) -> Result<Environment> {
    spec.validate()?;
    let gamma = spec.gamma();
    let (mdp, fmap, layout) = match spec.name {
        EnvName::TwoState => {
            let mdp = two_state(gamma)?;
            (mdp, FeatureMap::identity(2), None)
        }
        EnvName::Ring => {
            let mdp = ring(spec.int_param("n")?, spec.param("noise"), gamma)?;
            let n = mdp.n_states();
            (mdp, FeatureMap::identity(n), None)
        }
        EnvName::Chain => {
            let mdp = chain(spec.int_param("n")?, gamma)?;
            let n = mdp.n_states();
            (mdp, FeatureMap::identity(n), None)
        }
        EnvName::GridworldOpen => {
            let layout = GridLayout::open(spec.int_param("rows")?, spec.int_param("cols")?);
            let start = layout.state_at(layout.rows - 1, 0);
            let goal = layout.state_at(0, layout.cols - 1);
            let goal_kind = if spec.param("goal_terminal") != 0.0 {
                Goal::Terminal
            } else {
                Goal::Teleport
            };
            let distractor = spec.param("distractor_reward");
            let mut mdp = gridworld(&layout, start, goal, goal_kind, spec.param("goal_reward"), spec.param("slip"), gamma)?;
            if distractor != 0.0 {
                mdp = with_distractor(&mdp, layout.state_at(layout.rows - 2, 0), start, distractor)?;
            }
            (mdp, FeatureMap::identity(layout.n_cells()), Some(layout))
        }
        EnvName::GridworldSlits => {
            let layout = slits_layout();
            let start = layout.state_at(layout.rows - 1, 0);
            let goal = layout.state_at(0, layout.cols - 1);
            let mdp = gridworld(&layout, start, goal, Goal::Terminal, 1.0, 0.0, gamma)?;
            (mdp, FeatureMap::identity(layout.n_cells()), Some(layout))
        }
        EnvName::WindyGridworld => {
            let (mdp, layout) = windy_gridworld(gamma)?;
            (mdp, FeatureMap::identity(layout.n_cells()), Some(layout))
        }
        EnvName::FrozenLake => {
            let (mdp, layout) = frozen_lake(spec.param("slippery") != 0.0, gamma)?;
            (mdp, FeatureMap::identity(16), Some(layout))
        }
        EnvName::AliasedCounterexample => {
            let (mdp, fmap) = aliased_counterexample(gamma)?;
            (mdp, fmap, None)
        }
    };
    Ok(Environment {
        name: spec.name,
        mdp,
        fmap,
        layout,
        t_max: spec.t_max(),
    })
}

/// Two states, two actions. Action 0 and action 1 lead to different optimal
/// values in both states; the numbers are a fixed fixture, not data.
pub fn two_state(gamma: f64) -> Result<TabularMdp> {
    let kernel = vec![
        0.7, 0.3, // s0, a0
        0.2, 0.8, // s0, a1
        0.99, 0.01, // s1, a0
        0.4, 0.6, // s1, a1
    ];
    let reward = vec![-0.45, -0.1, 0.5, 0.3];
    TabularMdp::new(2, 2, kernel, reward, vec![0.5, 0.5], gamma, vec![false; 2])
}

/// `n`-cycle with actions {left, right}. The intended neighbour is reached
/// w.p. `1 - noise/2`, the other w.p. `noise/2`; `noise = 1` is the
/// uniform-move ring. Zero rewards, uniform start.
pub fn ring(n: usize, noise: f64, gamma: f64) -> Result<TabularMdp> {
    let mut b = Builder::new(n, 2);
    for s in 0..n {
        let left = (s + n - 1) % n;
        let right = (s + 1) % n;
        b.add(s, 0, left, 1.0 - noise / 2.0);
        b.add(s, 0, right, noise / 2.0);
        b.add(s, 1, right, 1.0 - noise / 2.0);
        b.add(s, 1, left, noise / 2.0);
    }
    b.finish(vec![1.0 / n as f64; n], gamma)
}

/// Deterministic line `0 .. n-1` with actions {left, right}; state `n - 1` is
/// a terminal goal and stepping into it pays 1.
pub fn chain(n: usize, gamma: f64) -> Result<TabularMdp> {
    let goal = n - 1;
    let mut b = Builder::new(n, 2);
    for s in 0..goal {
        b.add(s, 0, s.saturating_sub(1), 1.0);
        b.add(s, 1, s + 1, 1.0);
    }
    b.terminal(goal);
    b.goal_reward(goal);
    b.finish(delta(n, 0), gamma)
}

/// What happens on reaching the goal cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Goal {
    /// The goal is terminal; entering it pays the goal reward.
    Terminal,
    /// Every action at the goal pays the goal reward and returns to the start.
    Teleport,
}

fn gridworld(
    layout: &GridLayout,
    start: usize,
    goal: usize,
    goal_kind: Goal,
    goal_reward: f64,
    slip: f64,
    gamma: f64,
) -> Result<TabularMdp> {
    let n = layout.n_cells();
    let mut b = Builder::new(n, 4);
    for s in 0..n {
        if layout.is_wall(s) {
            b.absorbing(s);
            continue;
        }
        if s == goal && goal_kind == Goal::Teleport {
            for a in 0..4 {
                b.add(s, a, start, 1.0);
                b.set_reward(s, a, goal_reward);
            }
            continue;
        }
        for (a, &dir) in COMPASS.iter().enumerate() {
            b.add(s, a, layout.step(s, dir), 1.0 - slip);
            for &other in &COMPASS {
                b.add(s, a, layout.step(s, other), slip / 4.0);
            }
        }
    }
    if goal_kind == Goal::Terminal {
        b.terminal(goal);
        b.goal_reward(goal);
        b.reward.iter_mut().for_each(|r| *r *= goal_reward);
    }
    b.finish(delta(n, start), gamma)
}

/// Turns `cell` into a teleport back to `start` paying `reward`.
fn with_distractor(mdp: &TabularMdp, cell: usize, start: usize, reward: f64) -> Result<TabularMdp> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut b = Builder::new(ns, na);
    for s in 0..ns {
        for a in 0..na {
            if s == cell {
                b.add(s, a, start, 1.0);
                b.set_reward(s, a, reward);
            } else {
                for (next, &p) in mdp.kernel_row(s, a).iter().enumerate() {
                    b.add(s, a, next, p);
                }
                b.set_reward(s, a, mdp.reward(s, a));
            }
        }
    }
    b.terminal = mdp.terminal().to_vec();
    b.finish(mdp.alpha().to_vec(), mdp.gamma())
}

/// 11×11 grid, full-height walls in columns 3 and 7, each pierced at rows 2
/// and 8.
pub fn slits_layout() -> GridLayout {
    let mut layout = GridLayout::open(11, 11);
    for col in [3, 7] {
        for row in 0..11 {
            if row != 2 && row != 8 {
                let s = layout.state_at(row, col);
                layout.walls[s] = true;
            }
        }
    }
    layout
}

/// 7×10 windy gridworld: winds push up by the strength of the column the
/// agent leaves; −1 per step; start (3, 0), goal (3, 7).
pub fn windy_gridworld(gamma: f64) -> Result<(TabularMdp, GridLayout)> {
    const WIND: [isize; 10] = [0, 0, 0, 1, 1, 1, 2, 2, 1, 0];
    let layout = GridLayout::open(7, 10);
    let n = layout.n_cells();
    let start = layout.state_at(3, 0);
    let goal = layout.state_at(3, 7);
    let mut b = Builder::new(n, 4);
    for s in 0..n {
        let (r, c) = layout.cell(s);
        for (a, &(dr, dc)) in COMPASS.iter().enumerate() {
            let nr = (r as isize + dr - WIND[c]).clamp(0, layout.rows as isize - 1);
            let nc = (c as isize + dc).clamp(0, layout.cols as isize - 1);
            b.add(s, a, layout.state_at(nr as usize, nc as usize), 1.0);
            b.set_reward(s, a, -1.0);
        }
    }
    b.terminal(goal);
    Ok((b.finish(delta(n, start), gamma)?, layout))
}

pub const FROZEN_LAKE_MAP: [&str; 4] = ["SFFF", "FHFH", "FFFH", "HFFG"];

/// 4×4 FrozenLake. Slippery moves go the intended way or either
/// perpendicular way w.p. 1/3 each. Holes and goal are terminal; reaching the
/// goal pays 1.
pub fn frozen_lake(slippery: bool, gamma: f64) -> Result<(TabularMdp, GridLayout)> {
    let layout = GridLayout::open(4, 4);
    let cells: Vec<u8> = FROZEN_LAKE_MAP.iter().flat_map(|r| r.bytes()).collect();
    let mut b = Builder::new(16, 4);
    for s in 0..16 {
        for a in 0..4 {
            if slippery {
                for da in [3, 0, 1] {
                    b.add(s, a, layout.step(s, LAKE[(a + da) % 4]), 1.0 / 3.0);
                }
            } else {
                b.add(s, a, layout.step(s, LAKE[a]), 1.0);
            }
        }
    }
    for (s, &c) in cells.iter().enumerate() {
        if c == b'H' || c == b'G' {
            b.terminal(s);
        }
    }
    let goal = cells.iter().position(|&c| c == b'G').unwrap();
    b.goal_reward(goal);
    // Three thirds do not always sum to exactly one; renormalise rows.
    for row in b.kernel.chunks_mut(16) {
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok((b.finish(delta(16, 0), gamma)?, layout))
}

/// Four states: s0 start, s1 and s2 aliased (one shared feature row), s3
/// terminal. From s0 action 0 goes to s1 and action 1 to s2. In s1 action 0
/// pays 1 and action 1 pays 0; in s2 action 0 pays 0 and action 1 pays 2.
/// Both then end in s3.
pub fn aliased_counterexample(gamma: f64) -> Result<(TabularMdp, FeatureMap)> {
    let mut b = Builder::new(4, 2);
    b.add(0, 0, 1, 1.0);
    b.add(0, 1, 2, 1.0);
    for s in [1, 2] {
        for a in 0..2 {
            b.add(s, a, 3, 1.0);
        }
    }
    b.set_reward(1, 0, 1.0);
    b.set_reward(2, 1, 2.0);
    b.terminal(3);
    let mdp = b.finish(delta(4, 0), gamma)?;
    Ok((mdp, FeatureMap::new(vec![0, 1, 1, 2], 3)?))
}

/// One transition `(s_t, a_t, r_{t+1}, s_{t+1}, done_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `S_0, ..., S_T`: each step's state followed by the last next-state.
    pub fn states(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.steps.iter().map(|s| s.state).collect();
        if let Some(last) = self.steps.last() {
            out.push(last.next_state);
        }
        out
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .fold(0.0, |acc, s| s.reward + gamma * acc)
    }
}

/// Counter layout for one episode's stream: slot 0 draws the start state,
/// slots `2t + 1` and `2t + 2` draw the action and next state of step `t`.
pub fn start_counter() -> u64 {
    0
}

pub fn action_counter(t: usize) -> u64 {
    2 * t as u64 + 1
}

pub fn transition_counter(t: usize) -> u64 {
    2 * t as u64 + 2
}

pub fn draw_start(mdp: &TabularMdp, rng: &CounterRng) -> usize {
    rng.categorical(start_counter(), mdp.alpha())
}

pub fn draw_next(mdp: &TabularMdp, s: usize, a: usize, rng: &CounterRng, t: usize) -> usize {
    sample_index(rng.uniform(transition_counter(t)), mdp.kernel_row(s, a))
}

/// Rolls out `policy` for episode 0 of `seed`.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    t_max: usize,
    seed: u64,
) -> Result<Trajectory> {
    sample_episode(mdp, policy, fmap, t_max, seed, 0)
}

/// Rolls out `policy` from `alpha` until a terminal state or `t_max` steps.
/// Draws are keyed by `(seed, episode, step)`.
pub fn sample_episode(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    t_max: usize,
    seed: u64,
    episode: u64,
) -> Result<Trajectory> {
    if t_max == 0 {
        return Err(Error::InvalidArgument("t_max must be at least 1".into()));
    }
    let pi = policy_table(mdp, policy, fmap)?;
    let na = mdp.n_actions();
    let rng = CounterRng::new(seed, episode);
    let mut s = draw_start(mdp, &rng);
    let mut steps = Vec::with_capacity(t_max.min(4096));
    for t in 0..t_max {
        let a = rng.categorical(action_counter(t), &pi[s * na..(s + 1) * na]);
        let next = draw_next(mdp, s, a, &rng, t);
        let done = mdp.is_terminal(next);
        steps.push(Step {
            state: s,
            action: a,
            reward: mdp.reward(s, a),
            next_state: next,
            done,
        });
        if done {
            break;
        }
        s = next;
    }
    Ok(Trajectory { steps })
}

/// Episodes `0..n` of `seed`, concatenated in order.
pub fn sample_episodes(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    fmap: &FeatureMap,
    t_max: usize,
    seed: u64,
    n: usize,
) -> Result<Vec<Trajectory>> {
    (0..n as u64)
        .map(|e| sample_episode(mdp, policy, fmap, t_max, seed, e))
        .collect()
}
