//! Gridworld coverage environment and a deep Q-network trainer.
//!
//! The agent starts at grid point 0 and moves between neighboring points.
//! Reaching a new point earns a morphology reward from the reward table;
//! leaving the grid or revisiting a point ends the episode with a penalty,
//! and every terminal step also charges a penalty per unvisited point.

mod agent;
mod mlp;
mod replay;

pub use agent::{
    epsilon_decay, extract_greedy_path, masked_greedy_path, select_action, tabular_q_update, td_update, train, train_with, EpisodeRecord,
    GreedyRollout, Snapshot, TrainConfig, TrainOutcome, TrainSeeds,
};
pub use mlp::{Adam, Mlp};
pub use replay::{ReplayBuffer, Transition};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{MovementMetrics, RewardTable};
use crate::scanpath::{Action, GridSpec};

/// Which morphology quantity the move reward favors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RewardCase {
    /// Low aspect ratio.
    AspectRatio = 1,
    /// Small grains.
    GrainVolume = 2,
    /// Weighted combination of both.
    Combined = 3,
}

impl TryFrom<u8> for RewardCase {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::AspectRatio),
            2 => Ok(Self::GrainVolume),
            3 => Ok(Self::Combined),
            _ => Err(format!("reward case must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<RewardCase> for u8 {
    fn from(c: RewardCase) -> u8 {
        c as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub case: RewardCase,
    pub alpha: f64,
    pub beta: f64,
    /// Grain volume that maps to a reward of one.
    pub gv_scale_um3: f64,
    pub r_collision: f64,
    pub r_oob: f64,
    pub r_unvisited_per_point: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            case: RewardCase::AspectRatio,
            alpha: 0.5,
            beta: 0.9,
            gv_scale_um3: 1000.0,
            r_collision: -1.0,
            r_oob: -1.0,
            r_unvisited_per_point: -10.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha,
            self.beta,
            self.gv_scale_um3,
            self.r_collision,
            self.r_oob,
            self.r_unvisited_per_point,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("reward config values must be finite"));
        }
        if !(self.gv_scale_um3 > 0.0) {
            return Err(Error::invalid("gv_scale_um3 must be positive"));
        }
        Ok(())
    }

    /// Reward for reaching a new point. Movements without metrics (nothing
    /// melted, or no grain above the volume threshold) earn zero.
    pub fn move_reward(&self, m: &MovementMetrics) -> f64 {
        let (Some(ar), Some(gv)) = (m.avg_aspect_ratio, m.avg_grain_volume_um3) else {
            return 0.0;
        };
        let r_ar = 1.0 / ar;
        let r_gv = self.gv_scale_um3 / gv;
        match self.case {
            RewardCase::AspectRatio => r_ar,
            RewardCase::GrainVolume => r_gv,
            RewardCase::Combined => self.alpha * r_ar + self.beta * r_gv,
        }
    }
}

/// Why an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Covered,
    OutOfBounds,
    Revisit,
    StepCap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub agent_index: usize,
    pub visited: Vec<bool>,
    pub visited_count: usize,
    pub steps: usize,
    pub done: bool,
    pub termination: Option<Termination>,
}

impl EnvState {
    /// One-hot position vector of length `n^2`.
    pub fn encoding(&self) -> Vec<f64> {
        one_hot(self.visited.len(), self.agent_index)
    }

    pub fn covered(&self) -> bool {
        self.termination == Some(Termination::Covered)
    }
}

pub fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Grid environment with move rewards precomputed from a table.
#[derive(Clone, Debug)]
pub struct Env {
    grid: GridSpec,
    cfg: RewardConfig,
    /// Move reward per `(from, action)` row; `None` when out of bounds.
    move_rewards: Vec<Option<f64>>,
}

impl Env {
    pub fn new(grid: &GridSpec, table: &RewardTable, cfg: &RewardConfig) -> Result<Self> {
        grid.validate()?;
        cfg.validate()?;
        let tg = &table.grid;
        let same = tg.n == grid.n
            && (tg.hatch_mm - grid.hatch_mm).abs() <= 1e-9 * grid.hatch_mm
            && (0..2).all(|k| (tg.origin_mm[k] - grid.origin_mm[k]).abs() <= 1e-9);
        if !same {
            return Err(Error::invalid(format!("reward table grid {tg:?} does not match {grid:?}")));
        }
        let move_rewards = table
            .entries()
            .iter()
            .map(|e| e.metrics.as_ref().map(|m| cfg.move_reward(m)))
            .collect();
        Ok(Self {
            grid: *grid,
            cfg: *cfg,
            move_rewards,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.cfg
    }

    pub fn points(&self) -> usize {
        self.grid.points()
    }

    pub fn move_reward(&self, from: usize, action: Action) -> Option<f64> {
        self.move_rewards[from * 4 + action.index()]
    }

    pub fn reset(&self) -> EnvState {
        let mut visited = vec![false; self.points()];
        visited[0] = true;
        EnvState {
            agent_index: 0,
            visited,
            visited_count: 1,
            steps: 0,
            done: false,
            termination: None,
        }
    }

    /// Applies `action`, returning the reward and whether the episode ended.
    pub fn step(&self, s: &mut EnvState, action: Action) -> Result<(f64, bool)> {
        if s.done {
            return Err(Error::ContractViolation("step after the episode ended".into()));
        }
        s.steps += 1;
        let mut reward;
        match self.grid.neighbor(s.agent_index, action) {
            None => {
                reward = self.cfg.r_oob;
                s.termination = Some(Termination::OutOfBounds);
            }
            Some(j) if s.visited[j] => {
                reward = self.cfg.r_collision;
                s.termination = Some(Termination::Revisit);
            }
            Some(j) => {
                reward = self.move_reward(s.agent_index, action).unwrap_or(0.0);
                s.visited[j] = true;
                s.visited_count += 1;
                s.agent_index = j;
                if s.visited_count == self.points() {
                    s.termination = Some(Termination::Covered);
                } else if s.steps >= self.points() {
                    s.termination = Some(Termination::StepCap);
                }
            }
        }
        if s.termination.is_some() {
            s.done = true;
            reward += self.cfg.r_unvisited_per_point * (self.points() - s.visited_count) as f64;
        }
        Ok((reward, s.done))
    }

    /// Best undiscounted episode return over every action sequence, with
    /// one sequence achieving it (ties resolved by lowest action order).
    pub fn exhaustive_optimum(&self) -> (f64, Vec<Action>) {
        fn go(env: &Env, s: &EnvState, acc: f64, path: &mut Vec<Action>, best: &mut (f64, Vec<Action>)) {
            for a in Action::ALL {
                let mut t = s.clone();
                let (r, done) = env.step(&mut t, a).expect("not done");
                path.push(a);
                if done {
                    if acc + r > best.0 + 1e-12 {
                        *best = (acc + r, path.clone());
                    }
                } else {
                    go(env, &t, acc + r, path, best);
                }
                path.pop();
            }
        }
        let mut best = (f64::NEG_INFINITY, Vec::new());
        go(self, &self.reset(), 0.0, &mut Vec::new(), &mut best);
        best
    }

    /// Return of following `actions` from reset until the episode ends.
    pub fn episode_return(&self, actions: &[Action]) -> Result<(f64, EnvState)> {
        let mut s = self.reset();
        let mut total = 0.0;
        for &a in actions {
            let (r, done) = self.step(&mut s, a)?;
            total += r;
            if done {
                break;
            }
        }
        Ok((total, s))
    }
}
