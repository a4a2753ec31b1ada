//! Bandit bookkeeping over the instruction list.
//!
//! Every instruction is an arm. One batch evaluation is one pull, and the
//! reward of that pull is the batch-average score (higher is better).
//! Selection and pruning are pure functions over snapshots of [`ArmStats`].

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque arm identifier. Instructions use the same id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmId(pub u64);

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectorError {
    #[error("inconsistent bandit state: arm {arm} has {pulls} pulls but total is {total}")]
    InconsistentState { arm: ArmId, pulls: u64, total: u64 },
    #[error("cannot select from an empty instruction pool")]
    EmptyPool,
    #[error("no instruction has been evaluated yet")]
    NoEvaluatedInstruction,
    #[error("invalid selector config: {0}")]
    InvalidConfig(String),
}

/// Pull count and running reward for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub arm_id: ArmId,
    pub pulls: u64,
    pub reward_sum: f64,
    /// `None` until the first pull.
    pub mean_reward: Option<f64>,
    pub created_at: u32,
}

impl ArmStats {
    pub fn new(arm_id: ArmId, created_at: u32) -> Self {
        Self {
            arm_id,
            pulls: 0,
            reward_sum: 0.0,
            mean_reward: None,
            created_at,
        }
    }

    /// Builds stats that already carry `pulls` pulls averaging `mean`.
    pub fn with_history(arm_id: ArmId, created_at: u32, pulls: u64, mean: f64) -> Self {
        if pulls == 0 {
            return Self::new(arm_id, created_at);
        }
        Self {
            arm_id,
            pulls,
            reward_sum: mean * pulls as f64,
            mean_reward: Some(mean),
            created_at,
        }
    }

    pub fn record(&mut self, reward: f64) {
        debug_assert!(reward.is_finite());
        self.pulls += 1;
        self.reward_sum += reward;
        self.mean_reward = Some(self.reward_sum / self.pulls as f64);
    }

    pub fn is_pulled(&self) -> bool {
        self.pulls > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ucb,
    Greedy,
    EpsilonGreedy,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ucb => "ucb",
            Strategy::Greedy => "greedy",
            Strategy::EpsilonGreedy => "epsilon_greedy",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ucb" => Ok(Strategy::Ucb),
            "greedy" => Ok(Strategy::Greedy),
            "epsilon_greedy" => Ok(Strategy::EpsilonGreedy),
            other => Err(SelectorError::InvalidConfig(format!(
                "unknown strategy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub strategy: Strategy,
    pub exploration_c: f64,
    /// Only consulted by [`Strategy::EpsilonGreedy`].
    pub epsilon: f64,
    pub capacity: usize,
    pub rng_seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ucb,
            exploration_c: std::f64::consts::SQRT_2,
            epsilon: 0.1,
            capacity: 5,
            rng_seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SelectorError> {
        if !(self.exploration_c.is_finite() && self.exploration_c >= 0.0) {
            return Err(SelectorError::InvalidConfig(format!(
                "exploration_c must be finite and >= 0, got {}",
                self.exploration_c
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(SelectorError::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.capacity == 0 {
            return Err(SelectorError::InvalidConfig("capacity must be >= 1".into()));
        }
        Ok(())
    }
}

/// UCB1 index: `mean + c * sqrt(ln(total) / pulls)`, or `+inf` for an unpulled arm.
pub fn ucb_index(arm: &ArmStats, total_pulls: u64, c: f64) -> Result<f64, SelectorError> {
    if arm.pulls == 0 {
        return Ok(f64::INFINITY);
    }
    if total_pulls == 0 || total_pulls < arm.pulls {
        return Err(SelectorError::InconsistentState {
            arm: arm.arm_id,
            pulls: arm.pulls,
            total: total_pulls,
        });
    }
    let mean = arm.reward_sum / arm.pulls as f64;
    let bonus = c * ((total_pulls as f64).ln() / arm.pulls as f64).sqrt();
    Ok(mean + bonus)
}

pub fn total_pulls(arms: &[ArmStats]) -> u64 {
    arms.iter().map(|a| a.pulls).sum()
}

fn greedy_key(arm: &ArmStats) -> f64 {
    arm.mean_reward.unwrap_or(f64::INFINITY)
}

/// Higher key first, then older arm, then lower id.
fn rank_desc(a: (f64, &ArmStats), b: (f64, &ArmStats)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.created_at.cmp(&b.1.created_at))
        .then(a.1.arm_id.cmp(&b.1.arm_id))
}

fn selection_keys(
    arms: &[ArmStats],
    strategy: Strategy,
    c: f64,
    total: u64,
) -> Result<Vec<f64>, SelectorError> {
    match strategy {
        Strategy::Ucb => arms.iter().map(|a| ucb_index(a, total, c)).collect(),
        Strategy::Greedy | Strategy::EpsilonGreedy => Ok(arms.iter().map(greedy_key).collect()),
    }
}

fn best_position(arms: &[ArmStats], keys: &[f64]) -> usize {
    (0..arms.len())
        .min_by(|&i, &j| rank_desc((keys[i], &arms[i]), (keys[j], &arms[j])))
        .expect("non-empty")
}

/// Picks the next arm under the configured strategy.
///
/// Greedy ranks unpulled arms above every pulled arm. Epsilon-greedy takes the
/// greedy arm with probability `1 - epsilon` and otherwise a uniform draw over
/// the remaining arms. Ties go to the oldest arm, then the lowest id.
pub fn select_arm<R: Rng + ?Sized>(
    arms: &[ArmStats],
    config: &SelectorConfig,
    total_pulls: u64,
    rng: &mut R,
) -> Result<ArmId, SelectorError> {
    if arms.is_empty() {
        return Err(SelectorError::EmptyPool);
    }
    let keys = selection_keys(arms, config.strategy, config.exploration_c, total_pulls)?;
    let best = best_position(arms, &keys);
    if config.strategy == Strategy::EpsilonGreedy && arms.len() > 1 {
        let explore: f64 = rng.gen();
        if explore < config.epsilon {
            let mut pick = rng.gen_range(0..arms.len() - 1);
            if pick >= best {
                pick += 1;
            }
            return Ok(arms[pick].arm_id);
        }
    }
    Ok(arms[best].arm_id)
}

/// The pulled arm with the lowest mean reward.
pub fn find_worst_arm(arms: &[ArmStats]) -> Result<ArmId, SelectorError> {
    arms.iter()
        .filter_map(|a| a.mean_reward.map(|m| (m, a)))
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.created_at.cmp(&b.1.created_at))
                .then(a.1.arm_id.cmp(&b.1.arm_id))
        })
        .map(|(_, a)| a.arm_id)
        .ok_or(SelectorError::NoEvaluatedInstruction)
}

/// The pulled arm with the highest mean reward, if any arm was pulled.
pub fn find_best_arm(arms: &[ArmStats]) -> Option<ArmId> {
    arms.iter()
        .filter_map(|a| a.mean_reward.map(|m| (m, a)))
        .min_by(|a, b| rank_desc(*a, *b))
        .map(|(_, a)| a.arm_id)
}

/// Shrinks the list to at most `capacity` arms.
///
/// The best-mean pulled arm always survives. Remaining slots go to the arms
/// with the highest selection index under the configured strategy
/// (UCB index for `ucb`, mean with unpulled first otherwise). Survivors keep
/// their input order.
pub fn prune_to_capacity(arms: &[ArmStats], config: &SelectorConfig) -> Vec<ArmStats> {
    let capacity = config.capacity.max(1);
    if arms.len() <= capacity {
        return arms.to_vec();
    }
    let total = total_pulls(arms);
    let keys: Vec<f64> = match config.strategy {
        Strategy::Ucb => arms
            .iter()
            .map(|a| ucb_index(a, total, config.exploration_c).unwrap_or(f64::INFINITY))
            .collect(),
        Strategy::Greedy | Strategy::EpsilonGreedy => arms.iter().map(greedy_key).collect(),
    };

    let mut keep = vec![false; arms.len()];
    let mut slots = capacity;
    if let Some(best) = find_best_arm(arms) {
        let pos = arms
            .iter()
            .position(|a| a.arm_id == best)
            .expect("best arm is in list");
        keep[pos] = true;
        slots -= 1;
    }
    let mut order: Vec<usize> = (0..arms.len()).filter(|&i| !keep[i]).collect();
    order.sort_by(|&i, &j| rank_desc((keys[i], &arms[i]), (keys[j], &arms[j])));
    for &i in order.iter().take(slots) {
        keep[i] = true;
    }
    arms.iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(a, _)| a.clone())
        .collect()
}
