//! Evolution-strategies baseline: one perturbation per episode, return-weighted
//! noise directions, optional centered-rank shaping.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::improvement::weighted_noise_sum;
use crate::noise::{NoiseIndex, NoiseTable};
use crate::sampler::EsRollout;

/// One evaluated direction with its discounted episode return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsDirection {
    pub noise_idx: NoiseIndex,
    pub ret: f64,
}

impl EsDirection {
    pub fn from_rollout(rollout: &EsRollout, gamma: f64) -> Self {
        Self {
            noise_idx: rollout.noise_idx,
            ret: discounted_return(&rollout.rewards, gamma),
        }
    }
}

/// `sum_t gamma^t r_t`, accumulated back to front.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |g, &r| r + gamma * g)
}

/// Maps values to `rank / (n - 1) - 0.5`, averaging the ranks of ties. A
/// single value maps to 0.
pub fn centered_rank(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    let denom = (n - 1) as f64;
    ranks.into_iter().map(|r| r / denom - 0.5).collect()
}

/// Ascent direction `(1 / (n sigma)) sum w_i eps_i` with `w` the raw returns
/// or their centered ranks.
pub fn es_gradient(dirs: &[EsDirection], table: &NoiseTable, sigma: f64, shaped: bool) -> Result<Vec<f64>> {
    let weights: Vec<f64> = if shaped {
        centered_rank(&dirs.iter().map(|d| d.ret).collect::<Vec<_>>())
    } else {
        dirs.iter().map(|d| d.ret).collect()
    };
    weighted_noise_sum(
        table,
        dirs.iter().zip(weights).map(|(d, w)| (d.noise_idx, w)),
        dirs.len(),
        sigma,
    )
}
