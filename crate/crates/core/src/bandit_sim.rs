//! Selector-only regret harness over Bernoulli arms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::selector::{select_arm, ArmId, ArmStats, SelectorConfig, SelectorError};

#[derive(Debug, Clone, Serialize)]
pub struct BanditOutcome {
    pub probabilities: Vec<f64>,
    pub pulls: Vec<u64>,
    pub cumulative_reward: f64,
    /// Pseudo-regret after each round: sum of `p_best - p_chosen`.
    pub regret: Vec<f64>,
}

impl BanditOutcome {
    pub fn rounds(&self) -> usize {
        self.regret.len()
    }

    pub fn best_arm(&self) -> usize {
        best_index(&self.probabilities)
    }

    pub fn best_arm_fraction(&self) -> f64 {
        if self.rounds() == 0 {
            return 0.0;
        }
        self.pulls[self.best_arm()] as f64 / self.rounds() as f64
    }

    pub fn final_regret(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }
}

fn best_index(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Evenly spaced success probabilities from 0.9 downwards, 0.1 apart when
/// `k <= 9`, otherwise spread over [0.1, 0.9].
pub fn spaced_probabilities(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.9],
        _ => {
            let step = (0.8 / (k - 1) as f64).min(0.1);
            (0..k).map(|i| 0.9 - step * i as f64).collect()
        }
    }
}

/// Runs `rounds` select-then-pull rounds with the production selector.
///
/// Per round the selector runs first (epsilon-greedy consumes RNG draws here),
/// then one uniform draw decides the Bernoulli reward.
pub fn simulate(
    probabilities: &[f64],
    config: &SelectorConfig,
    rounds: usize,
    seed: u64,
) -> Result<BanditOutcome, SelectorError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arms: Vec<ArmStats> = (0..probabilities.len())
        .map(|i| ArmStats::new(ArmId(i as u64), i as u32))
        .collect();
    let p_best = probabilities[best_index(probabilities)];
    let mut regret = Vec::with_capacity(rounds);
    let mut acc = 0.0;
    let mut reward_total = 0.0;
    for t in 0..rounds {
        let chosen = select_arm(&arms, config, t as u64, &mut rng)?.0 as usize;
        let reward = if rng.gen::<f64>() < probabilities[chosen] {
            1.0
        } else {
            0.0
        };
        arms[chosen].record(reward);
        reward_total += reward;
        acc += p_best - probabilities[chosen];
        regret.push(acc);
    }
    Ok(BanditOutcome {
        probabilities: probabilities.to_vec(),
        pulls: arms.iter().map(|a| a.pulls).collect(),
        cumulative_reward: reward_total,
        regret,
    })
}

/// Uniform-random arm choice baseline with the same reward model.
pub fn simulate_uniform(probabilities: &[f64], rounds: usize, seed: u64) -> BanditOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = probabilities.len();
    let p_best = probabilities[best_index(probabilities)];
    let mut pulls = vec![0u64; k];
    let mut regret = Vec::with_capacity(rounds);
    let mut acc = 0.0;
    let mut reward_total = 0.0;
    for _ in 0..rounds {
        let chosen = rng.gen_range(0..k);
        if rng.gen::<f64>() < probabilities[chosen] {
            reward_total += 1.0;
        }
        pulls[chosen] += 1;
        acc += p_best - probabilities[chosen];
        regret.push(acc);
    }
    BanditOutcome {
        probabilities: probabilities.to_vec(),
        pulls,
        cumulative_reward: reward_total,
        regret,
    }
}
