//! Zeroth-order policy improvement: per-segment GAE advantages, advantage
//! normalization, the weighted-direction gradient, top-direction sifting and
//! the sparsity-modified advantage for masked policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::SegmentValues;
use crate::noise::{NoiseIndex, NoiseTable};
use crate::numkit::AdamState;
use crate::policies::ParamVector;
use crate::sampler::IterationBatch;

/// Advantage of one perturbation direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionAdvantage {
    pub noise_idx: NoiseIndex,
    pub advantage: f64,
    /// Number of transitions in the segment the advantage was computed from.
    pub len: usize,
}

/// `A = sum_t (gamma lambda)^t delta_t` over each segment's own transitions,
/// bootstrapping with 0 after a terminal and with `V(s_k)` otherwise.
pub fn compute_segment_advantages(
    batch: &IterationBatch,
    values: &SegmentValues,
    gamma: f64,
    lambda: f64,
) -> Vec<DirectionAdvantage> {
    let decay = gamma * lambda;
    batch
        .segments
        .iter()
        .zip(values)
        .map(|(seg, vals)| {
            let k = seg.len();
            let mut gae = 0.0;
            for t in (0..k).rev() {
                let next = if t == k - 1 && seg.terminal { 0.0 } else { vals[t + 1] };
                let delta = seg.rewards[t] + gamma * next - vals[t];
                gae = delta + decay * gae;
            }
            DirectionAdvantage {
                noise_idx: seg.noise_idx,
                advantage: gae,
                len: k,
            }
        })
        .collect()
}

/// Mean and population standard deviation of the advantages.
pub fn advantage_stats(advs: &[DirectionAdvantage]) -> (f64, f64) {
    if advs.is_empty() {
        return (0.0, 0.0);
    }
    let n = advs.len() as f64;
    let mean = advs.iter().map(|a| a.advantage).sum::<f64>() / n;
    let var = advs.iter().map(|a| (a.advantage - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(A - mean) / max(std, 1e-8)` over the whole direction set.
pub fn normalize_advantages(advs: &[DirectionAdvantage]) -> Vec<DirectionAdvantage> {
    let (mean, std) = advantage_stats(advs);
    let scale = std.max(1e-8);
    advs.iter()
        .map(|a| DirectionAdvantage {
            advantage: (a.advantage - mean) / scale,
            ..*a
        })
        .collect()
}

/// `(1 / (count sigma)) sum_i w_i eps_i`, summed in the given order.
pub fn weighted_noise_sum<I>(table: &NoiseTable, weights: I, count: usize, sigma: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = (NoiseIndex, f64)>,
{
    if count == 0 {
        return Err(Error::InvalidArgument("gradient needs at least one direction".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let mut grad = vec![0.0; table.dim()];
    for (idx, w) in weights {
        let eps = table.slice(idx)?;
        grad.iter_mut().zip(eps).for_each(|(g, e)| *g += w * e);
    }
    let denom = count as f64 * sigma;
    grad.iter_mut().for_each(|g| *g /= denom);
    Ok(grad)
}

/// Ascent direction `(1 / (nH sigma)) sum A eps`. The denominator is the
/// number of directions passed in, so a sifted set averages over `b`.
pub fn zoac_gradient(advs: &[DirectionAdvantage], table: &NoiseTable, sigma: f64) -> Result<Vec<f64>> {
    weighted_noise_sum(
        table,
        advs.iter().map(|a| (a.noise_idx, a.advantage)),
        advs.len(),
        sigma,
    )
}

/// Keeps the `b` directions with the largest advantage. Ties at the cutoff go
/// to the lower noise index. Survivors keep their original order.
pub fn sift_top_directions(advs: &[DirectionAdvantage], b: usize) -> Result<Vec<DirectionAdvantage>> {
    if b == 0 || b > advs.len() {
        return Err(Error::InvalidArgument(format!(
            "sift count {b} outside 1..={}",
            advs.len()
        )));
    }
    let mut order: Vec<usize> = (0..advs.len()).collect();
    order.sort_by(|&i, &j| {
        advs[j]
            .advantage
            .total_cmp(&advs[i].advantage)
            .then(advs[i].noise_idx.cmp(&advs[j].noise_idx))
    });
    let mut keep = order[..b].to_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| advs[i]).collect())
}

/// `A' = beta A + (1 - beta)(1 - usage)`.
pub fn masked_advantage(advantage: f64, usage: f64, beta: f64) -> f64 {
    beta * advantage + (1.0 - beta) * (1.0 - usage)
}

/// Linear anneal of the sparsity weight `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub iterations: u64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.5,
            iterations: 1,
        }
    }
}

impl BetaSchedule {
    pub fn value(&self, iteration: u64) -> f64 {
        if self.iterations == 0 {
            return self.end;
        }
        let frac = (iteration as f64 / self.iterations as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Policy parameters, their optimizer and the perturbation scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub theta: ParamVector,
    pub adam: AdamState,
    pub sigma: f64,
}

impl ActorState {
    pub fn new(theta: ParamVector, lr: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let adam = AdamState::new(theta.len(), lr);
        Ok(Self { theta, adam, sigma })
    }

    /// One Adam step along an ascent direction (negated for the minimizer).
    pub fn ascend(&mut self, ascent: &[f64]) -> Result<()> {
        let descent: Vec<f64> = ascent.iter().map(|g| -g).collect();
        self.adam.step(&mut self.theta.0, &descent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use crate::sampler::Segment;
    use proptest::prelude::*;

    fn table(dim: usize) -> NoiseTable {
        NoiseTable::create(3, 10_000, dim).unwrap()
    }

    fn adv(idx: usize, a: f64) -> DirectionAdvantage {
        DirectionAdvantage {
            noise_idx: NoiseIndex(idx),
            advantage: a,
            len: 1,
        }
    }

    fn one_segment(obs: &[f64], rewards: &[f64], terminal: bool) -> IterationBatch {
        IterationBatch {
            iteration: 0,
            workers: 1,
            segments: vec![Segment {
                worker: 0,
                j: 0,
                noise_idx: NoiseIndex(0),
                observations: obs.iter().map(|&o| vec![o]).collect(),
                raw_observations: obs[..rewards.len()].iter().map(|&o| vec![o]).collect(),
                actions: vec![vec![0.0]; rewards.len()],
                rewards: rewards.to_vec(),
                terminal,
                timeout: false,
            }],
        }
    }

    #[test]
    fn lambda_zero_is_one_step_residual() {
        let batch = one_segment(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], false);
        let vals = vec![vec![0.5, -1.0, 2.0, 4.0]];
        let a = compute_segment_advantages(&batch, &vals, 0.9, 0.0);
        assert!((a[0].advantage - (1.0 + 0.9 * -1.0 - 0.5)).abs() < 1e-15);
        assert_eq!(a[0].len, 3);
    }

    #[test]
    fn zero_critic_terminal_segment_is_discounted_return() {
        let batch = one_segment(&[0.0; 4], &[1.0, 2.0, 3.0], true);
        let vals = vec![vec![0.0; 4]];
        let a = compute_segment_advantages(&batch, &vals, 0.5, 1.0);
        assert_eq!(a[0].advantage, 1.0 + 0.5 * 2.0 + 0.25 * 3.0);
    }

    #[test]
    fn terminal_ignores_last_value_but_timeout_bootstraps() {
        let mut batch = one_segment(&[0.0, 0.0], &[1.0], true);
        let vals = vec![vec![0.0, 10.0]];
        assert_eq!(compute_segment_advantages(&batch, &vals, 0.9, 0.95)[0].advantage, 1.0);
        batch.segments[0].terminal = false;
        batch.segments[0].timeout = true;
        assert!((compute_segment_advantages(&batch, &vals, 0.9, 0.95)[0].advantage - 10.0).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = RngStream::new(8);
        for trial in 0..200 {
            let k = 1 + (trial % 12);
            let terminal = trial % 3 == 0;
            let r = rng.gaussian_sample(k);
            let v = rng.gaussian_sample(k + 1);
            let batch = one_segment(&vec![0.0; k + 1], &r, terminal);
            let (gamma, lambda) = (0.99, rng.next_f64());
            let got = compute_segment_advantages(&batch, &vec![v.clone()], gamma, lambda)[0].advantage;
            let mut expected = 0.0;
            for t in 0..k {
                let next = if t == k - 1 && terminal { 0.0 } else { v[t + 1] };
                expected += (gamma * lambda).powi(t as i32) * (r[t] + gamma * next - v[t]);
            }
            assert!((got - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_basics() {
        let equal = normalize_advantages(&[adv(0, 3.0), adv(1, 3.0), adv(2, 3.0)]);
        assert!(equal.iter().all(|a| a.advantage == 0.0));
        let out = normalize_advantages(&[adv(0, 1.0), adv(1, 2.0), adv(2, 7.0), adv(3, -4.0)]);
        let (mean, std) = advantage_stats(&out);
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-8);
    }

    #[test]
    fn single_direction_with_advantage_sigma_returns_noise() {
        let t = table(5);
        let g = zoac_gradient(&[adv(17, 0.25)], &t, 0.25).unwrap();
        assert_eq!(g, t.slice(NoiseIndex(17)).unwrap());
        let zero = zoac_gradient(&[adv(1, 0.0), adv(2, 0.0)], &t, 0.2).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sifting() {
        let advs = vec![adv(5, 0.1), adv(2, 0.9), adv(7, 0.9), adv(1, -3.0)];
        assert_eq!(sift_top_directions(&advs, 4).unwrap(), advs);
        assert_eq!(sift_top_directions(&advs, 1).unwrap(), vec![adv(2, 0.9)]);
        assert_eq!(sift_top_directions(&advs, 2).unwrap(), vec![adv(2, 0.9), adv(7, 0.9)]);
        assert!(sift_top_directions(&advs, 0).is_err());
        assert!(sift_top_directions(&advs, 5).is_err());
        let t = table(4);
        let top = sift_top_directions(&advs, 1).unwrap();
        let g = zoac_gradient(&top, &t, 0.5).unwrap();
        let eps = t.slice(NoiseIndex(2)).unwrap();
        for (a, b) in g.iter().zip(eps) {
            assert!((a - 0.9 / 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_advantage_and_schedule() {
        assert_eq!(masked_advantage(0.4, 0.9, 1.0), 0.4);
        assert!((masked_advantage(0.4, 0.3, 0.0) - 0.7).abs() < 1e-15);
        let s = BetaSchedule {
            start: 1.0,
            end: 0.5,
            iterations: 100,
        };
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(50), 0.75);
        assert_eq!(s.value(100), 0.5);
        assert_eq!(s.value(1000), 0.5);
    }

    #[test]
    fn smoothed_bandit_gradient() {
        // reward -(theta + sigma eps)^2, one step per direction, V = 0:
        // E[A eps] / sigma = -2 theta.
        let (theta, sigma) = (1.0, 0.1);
        let t = NoiseTable::create(4, 1_000_000, 1).unwrap();
        let mut rng = RngStream::new(6);
        let advs: Vec<_> = (0..200_000)
            .map(|_| {
                let idx = t.draw_index(&mut rng);
                let a = theta + sigma * t.slice(idx).unwrap()[0];
                DirectionAdvantage {
                    noise_idx: idx,
                    advantage: -a * a,
                    len: 1,
                }
            })
            .collect();
        let g = zoac_gradient(&advs, &t, sigma).unwrap()[0];
        assert!((g + 2.0).abs() < 0.1, "{g}");
    }

    #[test]
    fn ascend_moves_uphill() {
        let mut actor = ActorState::new(ParamVector(vec![0.0, 0.0]), 0.01, 0.05).unwrap();
        actor.ascend(&[1.0, -2.0]).unwrap();
        assert!(actor.theta[0] > 0.0 && actor.theta[1] < 0.0);
        assert!(ActorState::new(ParamVector(vec![0.0]), 0.01, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_affine_invariant(
            raw in prop::collection::vec(-100.0f64..100.0, 2..40),
            a in 0.01f64..50.0,
            b in -50.0f64..50.0,
        ) {
            let base: Vec<_> = raw.iter().enumerate().map(|(i, &x)| adv(i, x)).collect();
            let moved: Vec<_> = raw.iter().enumerate().map(|(i, &x)| adv(i, a * x + b)).collect();
            let (_, std) = advantage_stats(&base);
            prop_assume!(std > 1e-3);
            let n1 = normalize_advantages(&base);
            let n2 = normalize_advantages(&moved);
            for (x, y) in n1.iter().zip(&n2) {
                prop_assert!((x.advantage - y.advantage).abs() < 1e-6);
            }
        }

        #[test]
        fn sifting_is_affine_invariant(
            raw in prop::collection::vec(-100.0f64..100.0, 1..40),
            a in 0.01f64..50.0,
            b in -50.0f64..50.0,
            frac in 0.0f64..1.0,
        ) {
            let k = 1 + ((raw.len() - 1) as f64 * frac) as usize;
            let base: Vec<_> = raw.iter().enumerate().map(|(i, &x)| adv(i, x)).collect();
            let moved: Vec<_> = raw.iter().enumerate().map(|(i, &x)| adv(i, a * x + b)).collect();
            let s1: Vec<_> = sift_top_directions(&base, k).unwrap().iter().map(|d| d.noise_idx).collect();
            let s2: Vec<_> = sift_top_directions(&moved, k).unwrap().iter().map(|d| d.noise_idx).collect();
            prop_assert_eq!(s1, s2);
        }

        #[test]
        fn gradient_is_linear_in_advantages(
            w1 in prop::collection::vec(-10.0f64..10.0, 6),
            w2 in prop::collection::vec(-10.0f64..10.0, 6),
            c in -3.0f64..3.0,
        ) {
            let t = table(3);
            let mk = |w: &[f64]| w.iter().enumerate().map(|(i, &x)| adv(100 * i, x)).collect::<Vec<_>>();
            let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + c * b).collect();
            let g1 = zoac_gradient(&mk(&w1), &t, 0.1).unwrap();
            let g2 = zoac_gradient(&mk(&w2), &t, 0.1).unwrap();
            let g = zoac_gradient(&mk(&combo), &t, 0.1).unwrap();
            for i in 0..3 {
                prop_assert!((g[i] - (g1[i] + c * g2[i])).abs() < 1e-9);
            }
        }
    }
}
