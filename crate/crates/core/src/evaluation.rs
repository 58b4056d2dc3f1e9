//! Policy evaluation: lambda-return value targets over reconstructed
//! trajectories and minibatch training of the critic on the squared loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::QuadraticValue;
use crate::error::{Error, Result};
use crate::numkit::{Activation, AdamState, LayerNormMode, MlpArch, MlpParams, RngStream};
use crate::sampler::IterationBatch;

/// Anything that maps a (normalized) observation to a state value.
pub trait ValueFunction: Sync {
    fn value(&self, obs: &[f64]) -> f64;
}

/// `V == 0`: turns the critic off.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroValue;

impl ValueFunction for ZeroValue {
    fn value(&self, _obs: &[f64]) -> f64 {
        0.0
    }
}

/// Constant critic, handy for offsets in tests and diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ConstantValue(pub f64);

impl ValueFunction for ConstantValue {
    fn value(&self, _obs: &[f64]) -> f64 {
        self.0
    }
}

impl ValueFunction for QuadraticValue {
    fn value(&self, obs: &[f64]) -> f64 {
        QuadraticValue::value(self, obs)
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> ValueFunction for F {
    fn value(&self, obs: &[f64]) -> f64 {
        self(obs)
    }
}

/// Tanh MLP value approximator with its own Adam state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub mlp: MlpParams,
    pub adam: AdamState,
    pub gamma: f64,
    pub lambda: f64,
}

impl CriticNet {
    pub fn new(obs_dim: usize, hidden: &[usize], lr: f64, gamma: f64, lambda: f64, stream: &mut RngStream) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let arch = MlpArch::new(sizes, Activation::Tanh, LayerNormMode::Off)?;
        let mlp = MlpParams::init(arch, stream, 1.0);
        let adam = AdamState::new(mlp.flat().len(), lr);
        Ok(Self {
            mlp,
            adam,
            gamma,
            lambda,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.flat().len()
    }
}

impl ValueFunction for CriticNet {
    fn value(&self, obs: &[f64]) -> f64 {
        self.mlp
            .forward(obs)
            .expect("critic input width is fixed at construction")[0]
    }
}

/// Values of every stored observation, segment by segment (`k + 1` each).
pub type SegmentValues = Vec<Vec<f64>>;

pub fn segment_values<V: ValueFunction + ?Sized>(batch: &IterationBatch, vf: &V) -> SegmentValues {
    batch
        .segments
        .par_iter()
        .map(|s| s.observations.iter().map(|o| vf.value(o)).collect())
        .collect()
}

/// Largest `|V|` over the stored observations.
pub fn max_abs_value(values: &SegmentValues) -> f64 {
    values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// One `(observation, target)` pair per collected transition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueTargetSet {
    pub observations: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl ValueTargetSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Lambda-return targets `G_t = V(s_t) + sum_k (gamma lambda)^k delta_{t+k}`
/// over whole trajectory fragments, computed by the backward recursion
/// `gae_t = delta_t + gamma lambda gae_{t+1}`. A fragment ends at an episode
/// end or at the worker's last segment; terminals bootstrap with 0, timeouts
/// and iteration cuts with the value of the final state.
pub fn compute_value_targets(batch: &IterationBatch, values: &SegmentValues, gamma: f64, lambda: f64) -> ValueTargetSet {
    let mut out = ValueTargetSet {
        observations: Vec::with_capacity(batch.transitions()),
        targets: vec![0.0; batch.transitions()],
    };
    let mut offsets = Vec::with_capacity(batch.segments.len());
    for seg in &batch.segments {
        offsets.push(out.observations.len());
        out.observations.extend(seg.observations[..seg.len()].iter().cloned());
    }
    for frag in batch.fragments() {
        let mut gae = 0.0;
        for si in frag.rev() {
            let seg = &batch.segments[si];
            let vals = &values[si];
            let k = seg.len();
            for t in (0..k).rev() {
                let next = if t == k - 1 && seg.terminal { 0.0 } else { vals[t + 1] };
                let delta = seg.rewards[t] + gamma * next - vals[t];
                gae = delta + gamma * lambda * gae;
                out.targets[offsets[si] + t] = vals[t] + gae;
            }
        }
    }
    out
}

/// Result of one critic update.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticUpdateReport {
    /// Mean `0.5 (V - G)^2` over each epoch, measured before each minibatch step.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Samples per parallel gradient chunk; fixed so that the summation order
/// does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

/// `epochs` passes of shuffled minibatch Adam on `0.5 (V(s) - G)^2`. Targets
/// stay fixed throughout.
pub fn critic_update(
    critic: &mut CriticNet,
    targets: &ValueTargetSet,
    batch_size: usize,
    epochs: usize,
    stream: &mut RngStream,
) -> Result<CriticUpdateReport> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no value targets to fit".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let dim = critic.param_count();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut report = CriticUpdateReport {
        epoch_losses: Vec::with_capacity(epochs),
        steps: 0,
    };
    for _ in 0..epochs {
        stream.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for mb in order.chunks(batch_size) {
            let scale = 1.0 / mb.len() as f64;
            let mlp = &critic.mlp;
            let partials: Vec<(Vec<f64>, f64)> = mb
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grad = vec![0.0; dim];
                    let mut loss = 0.0;
                    for &i in chunk {
                        let trace = mlp
                            .forward_trace(&targets.observations[i])
                            .expect("critic input width is fixed");
                        let err = trace.output[0] - targets.targets[i];
                        loss += 0.5 * err * err;
                        mlp.backward_accumulate(&trace, &[err * scale], &mut grad)
                            .expect("gradient buffer sized to the critic");
                    }
                    (grad, loss)
                })
                .collect();
            let mut grad = vec![0.0; dim];
            for (g, l) in &partials {
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                epoch_loss += l;
            }
            critic.adam.step(critic.mlp.flat_mut(), &grad)?;
            report.steps += 1;
        }
        report.epoch_losses.push(epoch_loss / targets.len() as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseIndex;
    use crate::sampler::Segment;

    fn segment(worker: usize, j: usize, obs: Vec<f64>, rewards: Vec<f64>, terminal: bool, timeout: bool) -> Segment {
        Segment {
            worker,
            j,
            noise_idx: NoiseIndex(0),
            raw_observations: obs[..rewards.len()].iter().map(|&o| vec![o]).collect(),
            observations: obs.iter().map(|&o| vec![o]).collect(),
            actions: vec![vec![0.0]; rewards.len()],
            rewards,
            terminal,
            timeout,
        }
    }

    /// Splits one trajectory `(obs[0..=T], rewards[0..T])` into segments of
    /// the given lengths.
    fn chunked(obs: &[f64], rewards: &[f64], lens: &[usize], terminal: bool) -> IterationBatch {
        let mut segments = Vec::new();
        let mut t = 0;
        for (j, &len) in lens.iter().enumerate() {
            let last = j == lens.len() - 1;
            segments.push(segment(
                0,
                j,
                obs[t..=t + len].to_vec(),
                rewards[t..t + len].to_vec(),
                last && terminal,
                false,
            ));
            t += len;
        }
        IterationBatch {
            iteration: 0,
            workers: 1,
            segments,
        }
    }

    /// Direct transcription of the forward sum (oracle).
    fn forward_sum_targets(v: &[f64], r: &[f64], gamma: f64, lambda: f64, terminal: bool) -> Vec<f64> {
        let t_len = r.len();
        (0..t_len)
            .map(|t| {
                let mut sum = 0.0;
                for k in 0..t_len - t {
                    let next = if t + k + 1 == t_len && terminal { 0.0 } else { v[t + k + 1] };
                    let delta = r[t + k] + gamma * next - v[t + k];
                    sum += (gamma * lambda).powi(k as i32) * delta;
                }
                v[t] + sum
            })
            .collect()
    }

    fn toy_value(o: &[f64]) -> f64 {
        0.3 * o[0] - 0.1 * o[0] * o[0] + 0.5
    }

    #[test]
    fn lambda_zero_gives_one_step_targets() {
        let obs = [0.0, 1.0, 2.0, 3.0];
        let r = [1.0, -2.0, 0.5];
        let batch = chunked(&obs, &r, &[2, 1], false);
        let vals = segment_values(&batch, &toy_value);
        let t = compute_value_targets(&batch, &vals, 0.9, 0.0);
        for i in 0..3 {
            let expected = r[i] + 0.9 * toy_value(&[obs[i + 1]]);
            assert!((t.targets[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_critic_lambda_one_terminal_gives_discounted_returns() {
        let r = [1.0, 2.0, 3.0];
        let batch = chunked(&[0.0; 4], &r, &[3], true);
        let vals = segment_values(&batch, &ZeroValue);
        let t = compute_value_targets(&batch, &vals, 0.5, 1.0);
        assert_eq!(t.targets, vec![1.0 + 0.5 * 2.0 + 0.25 * 3.0, 2.0 + 0.5 * 3.0, 3.0]);
    }

    #[test]
    fn matches_forward_sum_and_is_chunking_invariant() {
        let mut rng = RngStream::new(31);
        for terminal in [false, true] {
            let obs = rng.gaussian_sample(21);
            let r = rng.gaussian_sample(20);
            let v: Vec<f64> = obs.iter().map(|&o| toy_value(&[o])).collect();
            let oracle = forward_sum_targets(&v, &r, 0.99, 0.95, terminal);
            for lens in [vec![20], vec![10, 10], vec![3, 7, 1, 9], vec![1; 20]] {
                let batch = chunked(&obs, &r, &lens, terminal);
                let vals = segment_values(&batch, &toy_value);
                let t = compute_value_targets(&batch, &vals, 0.99, 0.95);
                assert_eq!(t.len(), 20);
                for i in 0..20 {
                    assert!((t.targets[i] - oracle[i]).abs() < 1e-10, "{lens:?} t={i}");
                    assert_eq!(t.observations[i], vec![obs[i]]);
                }
            }
        }
    }

    #[test]
    fn critic_does_not_move_on_exact_targets() {
        let mut rng = RngStream::new(2);
        let mut critic = CriticNet::new(2, &[8, 8], 3e-4, 0.99, 0.95, &mut rng).unwrap();
        let observations: Vec<Vec<f64>> = (0..50).map(|_| rng.gaussian_sample(2)).collect();
        let targets = observations.iter().map(|o| critic.value(o)).collect();
        let set = ValueTargetSet { observations, targets };
        let before = critic.mlp.flat().to_vec();
        critic_update(&mut critic, &set, 16, 3, &mut rng).unwrap();
        let moved = before
            .iter()
            .zip(critic.mlp.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved < 1e-8, "moved {moved}");
    }

    #[test]
    fn critic_fits_a_smooth_function() {
        let mut rng = RngStream::new(5);
        let mut critic = CriticNet::new(1, &[32, 32], 3e-3, 0.99, 0.95, &mut rng).unwrap();
        let observations: Vec<Vec<f64>> = (0..256).map(|i| vec![-2.0 + 4.0 * i as f64 / 255.0]).collect();
        let targets = observations.iter().map(|o| (1.5 * o[0]).sin() + 0.3 * o[0]).collect();
        let set = ValueTargetSet { observations, targets };
        let report = critic_update(&mut critic, &set, 32, 200, &mut rng).unwrap();
        let first = report.epoch_losses[0];
        let last = report.epoch_losses[report.epoch_losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(last < 0.01 * first, "first {first} last {last}");
        // Smoothed over windows of 10 epochs, the loss never jumps back up.
        let smooth: Vec<f64> = report
            .epoch_losses
            .chunks(10)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        assert!(smooth.windows(2).all(|w| w[1] <= 1.5 * w[0]), "{smooth:?}");
    }

    #[test]
    fn step_count_follows_batch_and_epochs() {
        let mut rng = RngStream::new(9);
        let mut critic = CriticNet::new(3, &[4], 3e-4, 0.99, 0.95, &mut rng).unwrap();
        let observations: Vec<Vec<f64>> = (0..1280).map(|_| rng.gaussian_sample(3)).collect();
        let targets = vec![1.0; 1280];
        let set = ValueTargetSet { observations, targets };
        let report = critic_update(&mut critic, &set, 64, 8, &mut rng).unwrap();
        assert_eq!(report.steps, 1280usize.div_ceil(64) * 8);
        assert_eq!(critic.adam.t, 160);
        let odd = ValueTargetSet {
            observations: set.observations[..100].to_vec(),
            targets: set.targets[..100].to_vec(),
        };
        let report = critic_update(&mut critic, &odd, 64, 8, &mut rng).unwrap();
        assert_eq!(report.steps, 2 * 8);
    }

    #[test]
    fn empty_targets_are_rejected() {
        let mut rng = RngStream::new(9);
        let mut critic = CriticNet::new(1, &[4], 3e-4, 0.99, 0.95, &mut rng).unwrap();
        assert!(critic_update(&mut critic, &ValueTargetSet::default(), 8, 1, &mut rng).is_err());
    }
}
