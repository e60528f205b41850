//! Tabular Q-learning over a discretised policy grid.
//!
//! States are cells of an `n x n` grid over `(c, eta)`; the reward for
//! entering a cell is the Doughnut score at its centre, except for barrier
//! cells which carry a fixed penalty. Episodes have no terminal state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doughnut::{cell_center, GroundTruthGrid};
use crate::error::{Error, Result};

/// Square grid; state `(i, j)` has `i` along `c` and `j` along `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
}

pub type State = (usize, usize);

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("resolution", "grid needs at least one cell"));
        }
        Ok(Self { n })
    }

    pub fn n_states(&self) -> usize {
        self.n * self.n
    }

    pub fn index(&self, (i, j): State) -> usize {
        i * self.n + j
    }

    pub fn state(&self, index: usize) -> State {
        (index / self.n, index % self.n)
    }

    pub fn contains(&self, (i, j): State) -> bool {
        i < self.n && j < self.n
    }

    /// Parameter values `(c, eta)` at the centre of a cell.
    pub fn center(&self, (i, j): State) -> (f64, f64) {
        (cell_center(i, self.n), cell_center(j, self.n))
    }

    /// Moves one cell; moves off the grid leave the state unchanged.
    pub fn apply(&self, (i, j): State, action: Action) -> State {
        let last = self.n - 1;
        match action {
            Action::Stay => (i, j),
            Action::IncC => ((i + 1).min(last), j),
            Action::DecC => (i.saturating_sub(1), j),
            Action::IncEta => (i, (j + 1).min(last)),
            Action::DecEta => (i, j.saturating_sub(1)),
        }
    }
}

/// `Stay` is listed first so that ties in an argmax resolve to staying put.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stay,
    IncC,
    DecC,
    IncEta,
    DecEta,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Stay, Action::IncC, Action::DecC, Action::IncEta, Action::DecEta];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Stay => "stay",
            Action::IncC => "c+",
            Action::DecC => "c-",
            Action::IncEta => "eta+",
            Action::DecEta => "eta-",
        }
    }
}

pub const N_ACTIONS: usize = Action::ALL.len();

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub grid: GridSpec,
    pub values: Vec<[f64; N_ACTIONS]>,
    /// Number of times each state was occupied when an action was chosen.
    pub visits: Vec<u64>,
}

impl QTable {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![[0.0; N_ACTIONS]; grid.n_states()],
            visits: vec![0; grid.n_states()],
        }
    }

    pub fn row(&self, s: State) -> &[f64; N_ACTIONS] {
        &self.values[self.grid.index(s)]
    }

    pub fn get(&self, s: State, a: Action) -> f64 {
        self.row(s)[a.index()]
    }

    pub fn max_value(&self, s: State) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First action attaining the maximum, so ties go to `Stay`.
    pub fn best_action(&self, s: State) -> Action {
        let row = self.row(s);
        let mut best = 0;
        for k in 1..N_ACTIONS {
            if row[k] > row[best] {
                best = k;
            }
        }
        Action::ALL[best]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, q| m.max(q.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RLConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub episodes: usize,
    pub steps: usize,
    pub resolution: usize,
    pub barriers: Vec<State>,
    pub barrier_reward: f64,
    pub start: State,
    pub seed: u64,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.5,
            beta: 2.0,
            episodes: 30_000,
            steps: 50,
            resolution: 10,
            barriers: default_barriers(),
            barrier_reward: -1.0,
            start: (9, 0),
            seed: 42,
        }
    }
}

/// A staircase wall along the lower-right edge of the Doughnut on the
/// default 10 x 10 grid. It blocks every shortest path from the
/// high-consumption, low-efficiency corner (11 moves become 12) and covers
/// the local reward maximum just below the Doughnut, where a short-sighted
/// agent would otherwise settle.
pub fn default_barriers() -> Vec<State> {
    vec![(3, 3), (3, 4), (4, 4), (4, 5)]
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", format!("{} is outside (0, 1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", format!("{} is outside [0, 1)", self.gamma)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param(
                "beta",
                format!("{} must be finite and non-negative", self.beta),
            ));
        }
        if !self.barrier_reward.is_finite() {
            return Err(Error::param("barrier_reward", "must be finite"));
        }
        let grid = GridSpec::new(self.resolution)?;
        if !grid.contains(self.start) {
            return Err(Error::param(
                "start",
                format!("{:?} is off the {}x{} grid", self.start, grid.n, grid.n),
            ));
        }
        if let Some(b) = self.barriers.iter().find(|b| !grid.contains(**b)) {
            return Err(Error::param(
                "barriers",
                format!("{b:?} is off the {}x{} grid", grid.n, grid.n),
            ));
        }
        Ok(())
    }
}

/// Per-cell rewards with barrier overrides applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardGrid {
    pub grid: GridSpec,
    /// Doughnut score at each cell centre, indexed like [`GridSpec::index`].
    pub scores: Vec<f64>,
    pub barrier: Vec<bool>,
    pub barrier_reward: f64,
}

impl RewardGrid {
    pub fn new(truth: &GroundTruthGrid, barriers: &[State], barrier_reward: f64) -> Result<Self> {
        let grid = GridSpec::new(truth.resolution)?;
        let mut barrier = vec![false; grid.n_states()];
        for &b in barriers {
            if !grid.contains(b) {
                return Err(Error::param(
                    "barriers",
                    format!("{b:?} is off the {}x{} grid", grid.n, grid.n),
                ));
            }
            barrier[grid.index(b)] = true;
        }
        Ok(Self {
            grid,
            scores: truth.scores.clone(),
            barrier,
            barrier_reward,
        })
    }

    pub fn is_barrier(&self, s: State) -> bool {
        self.barrier[self.grid.index(s)]
    }

    /// True for cells whose reward is positive, i.e. Doughnut cells that are
    /// not barriers.
    pub fn is_goal(&self, s: State) -> bool {
        state_reward(s, self) > 0.0
    }

    /// Largest reward magnitude, which bounds `|Q|` by `r_max / (1 - gamma)`.
    pub fn r_max(&self) -> f64 {
        self.scores
            .iter()
            .fold(self.barrier_reward.abs(), |m, d| m.max(d.abs()))
    }
}

pub fn state_reward(s: State, rewards: &RewardGrid) -> f64 {
    if rewards.is_barrier(s) {
        rewards.barrier_reward
    } else {
        rewards.scores[rewards.grid.index(s)]
    }
}

/// Softmax of `beta * q`, stabilised by subtracting the maximum.
pub fn action_probabilities(q: &[f64; N_ACTIONS], beta: f64) -> [f64; N_ACTIONS] {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = q.map(|v| (beta * (v - max)).exp());
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    p
}

pub fn select_action<R: Rng>(q: &QTable, s: State, beta: f64, rng: &mut R) -> Action {
    let p = action_probabilities(q.row(s), beta);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return Action::ALL[k];
        }
    }
    // Only reachable when rounding leaves the cumulative sum just below `u`.
    Action::ALL[p.iter().rposition(|&x| x > 0.0).unwrap_or(0)]
}

/// One temporal-difference step; returns the reward received on entering
/// `s_next`.
pub fn td_update(q: &mut QTable, rewards: &RewardGrid, s: State, a: Action, s_next: State, config: &RLConfig) -> f64 {
    let r = state_reward(s_next, rewards);
    let target = r + config.gamma * q.max_value(s_next);
    let idx = q.grid.index(s);
    let entry = &mut q.values[idx][a.index()];
    *entry += config.alpha * (target - *entry);
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: State,
    pub action: Action,
    pub reward: f64,
}

pub fn run_episode<R: Rng>(q: &mut QTable, rewards: &RewardGrid, config: &RLConfig, rng: &mut R) -> Vec<Step> {
    let mut s = config.start;
    let mut path = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let a = select_action(q, s, config.beta, rng);
        let s_next = q.grid.apply(s, a);
        q.visits[q.grid.index(s)] += 1;
        let reward = td_update(q, rewards, s, a, s_next, config);
        path.push(Step {
            state: s,
            action: a,
            reward,
        });
        s = s_next;
    }
    path
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainDiagnostics {
    /// Undiscounted reward collected in each episode.
    pub episode_returns: Vec<f64>,
    /// Largest `|Q|` seen after any episode.
    pub max_abs_q: f64,
}

pub fn train(config: &RLConfig, rewards: &RewardGrid) -> Result<(QTable, TrainDiagnostics)> {
    config.validate()?;
    if rewards.grid.n != config.resolution {
        return Err(Error::InvalidInput(format!(
            "reward grid has resolution {}, config expects {}",
            rewards.grid.n, config.resolution
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = QTable::zeros(rewards.grid);
    let mut episode_returns = Vec::with_capacity(config.episodes);
    let mut max_abs_q: f64 = 0.0;
    for _ in 0..config.episodes {
        let path = run_episode(&mut q, rewards, config, &mut rng);
        episode_returns.push(path.iter().map(|s| s.reward).sum());
        max_abs_q = max_abs_q.max(q.max_abs());
    }
    Ok((
        q,
        TrainDiagnostics {
            episode_returns,
            max_abs_q,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Visited states, starting with the start state.
    pub path: Vec<State>,
    pub reached_goal: bool,
    pub hit_barrier: bool,
}

/// Follows the greedy policy until it revisits a state or the path holds
/// `max_steps` states.
pub fn greedy_rollout(q: &QTable, rewards: &RewardGrid, start: State, max_steps: usize) -> Rollout {
    let mut path = Vec::new();
    let mut seen = vec![false; q.grid.n_states()];
    let mut s = start;
    while path.len() < max_steps && !seen[q.grid.index(s)] {
        seen[q.grid.index(s)] = true;
        path.push(s);
        s = q.grid.apply(s, q.best_action(s));
    }
    Rollout {
        reached_goal: path.iter().any(|&p| rewards.is_goal(p)),
        hit_barrier: path.iter().any(|&p| rewards.is_barrier(p)),
        path,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyRow {
    pub cell_c: f64,
    pub cell_eta: f64,
    pub q_stay: f64,
    pub best_action: &'static str,
    pub visits: u64,
}

/// One row per cell, `c` outer.
pub fn export_policy(q: &QTable) -> Vec<PolicyRow> {
    (0..q.grid.n_states())
        .map(|idx| {
            let s = q.grid.state(idx);
            let (cell_c, cell_eta) = q.grid.center(s);
            PolicyRow {
                cell_c,
                cell_eta,
                q_stay: q.get(s, Action::Stay),
                best_action: q.best_action(s).name(),
                visits: q.visits[idx],
            }
        })
        .collect()
}
