//! Closed-form variance bounds for the fixed-budget ES and ZOAC estimators,
//! their empirical trace variance at a frozen policy, and the value-gap metric.

use serde::{Deserialize, Serialize};

use crate::baselines::{es_gradient, EsDirection};
use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::evaluation::{max_abs_value, segment_values, ValueFunction};
use crate::improvement::{compute_segment_advantages, normalize_advantages, zoac_gradient};
use crate::noise::NoiseTable;
use crate::numkit::{RngStream, RunningStat};
use crate::policies::PolicySpec;
use crate::sampler::{run_episode, Episode, RolloutParams, Sampler, WorkerSnapshot};

/// Sum over coordinates of the unbiased sample variance.
pub fn estimator_variance(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: samples.len(),
        });
    }
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        crate::error::check_len(d, s.len())?;
        mean.iter_mut().zip(s).for_each(|(m, x)| *m += x);
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let ss: f64 = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
        .sum();
    Ok(ss / (n - 1.0))
}

/// Budget and noise shape shared by both bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Bound on `|r|`.
    pub alpha: f64,
    /// Bound on `|V|`; only used by the ZOAC bound.
    pub phi: f64,
    pub gamma: f64,
    /// Steps per segment `N`.
    pub rollout_length: usize,
    /// Segments per worker `H`.
    pub segments_per_worker: usize,
    pub workers: usize,
    pub sigma: f64,
    pub dim: usize,
}

impl BoundParams {
    fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if self.rollout_length == 0 || self.segments_per_worker == 0 || self.workers == 0 || self.dim == 0 {
            return bad("N, H, n and d must be at least 1");
        }
        if !(self.alpha >= 0.0 && self.phi >= 0.0) {
            return bad("alpha and phi must be non-negative");
        }
        Ok(())
    }

    /// `(1 - g^{NH})^2 alpha^2 d / (n sigma^2 (1 - g)^2)`.
    pub fn es_bound(&self) -> Result<f64> {
        self.check()?;
        let g = self.gamma;
        let steps = (self.rollout_length * self.segments_per_worker) as i32;
        let num = (1.0 - g.powi(steps)).powi(2) * self.alpha.powi(2) * self.dim as f64;
        Ok(num / (self.workers as f64 * self.sigma.powi(2) * (1.0 - g).powi(2)))
    }

    /// `((1 - g^N) alpha + (1 - g)(1 + g^N) phi)^2 d / (n H sigma^2 (1 - g)^2)`.
    pub fn zoac_bound(&self) -> Result<f64> {
        self.check()?;
        let g = self.gamma;
        let gn = g.powi(self.rollout_length as i32);
        let num = ((1.0 - gn) * self.alpha + (1.0 - g) * (1.0 + gn) * self.phi).powi(2) * self.dim as f64;
        let den = (self.workers * self.segments_per_worker) as f64 * self.sigma.powi(2) * (1.0 - g).powi(2);
        Ok(num / den)
    }

    /// ZOAC bound minus ES bound.
    pub fn bound_difference(&self) -> Result<f64> {
        Ok(self.zoac_bound()? - self.es_bound()?)
    }
}

pub fn es_variance_bound(
    alpha: f64,
    gamma: f64,
    rollout_length: usize,
    segments_per_worker: usize,
    workers: usize,
    sigma: f64,
    dim: usize,
) -> Result<f64> {
    BoundParams {
        alpha,
        phi: 0.0,
        gamma,
        rollout_length,
        segments_per_worker,
        workers,
        sigma,
        dim,
    }
    .es_bound()
}

#[allow(clippy::too_many_arguments)]
pub fn zoac_variance_bound(
    alpha: f64,
    phi: f64,
    gamma: f64,
    rollout_length: usize,
    segments_per_worker: usize,
    workers: usize,
    sigma: f64,
    dim: usize,
) -> Result<f64> {
    BoundParams {
        alpha,
        phi,
        gamma,
        rollout_length,
        segments_per_worker,
        workers,
        sigma,
        dim,
    }
    .zoac_bound()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Es,
    Zoac,
}

/// Empirical variance of one estimator next to its closed-form bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub estimator: EstimatorKind,
    pub empirical_variance: f64,
    pub bound: f64,
    pub samples: usize,
    pub params: BoundParams,
    pub mean_gradient_norm: f64,
}

impl VarianceReport {
    pub fn within_bound(&self) -> bool {
        self.empirical_variance <= self.bound
    }
}

/// Repeated gradient estimates at a frozen policy. Every sample restarts the
/// workers from the same environment states; only the noise changes.
pub struct GradientStudy<'a> {
    pub env: &'a EnvSpec,
    pub policy: &'a PolicySpec,
    pub theta: &'a [f64],
    pub normalizer: Option<&'a RunningStat>,
    pub table: &'a NoiseTable,
    pub workers: usize,
    pub rollout_length: usize,
    pub segments_per_worker: usize,
    pub sigma: f64,
    pub gamma: f64,
    /// GAE coefficient for the ZOAC estimator; 1 gives the plain N-step residual.
    pub lambda: f64,
    pub normalize_advantages: bool,
    pub env_seed: u64,
    pub noise_seed: u64,
    pub threads: usize,
}

impl GradientStudy<'_> {
    fn setup(&self) -> Result<(Sampler, Vec<WorkerSnapshot>, RunningStat)> {
        let sampler = Sampler::new(self.env, self.workers, self.env_seed, self.threads)?;
        let snaps = sampler.workers().iter().map(|w| w.snapshot()).collect();
        let stat = self
            .normalizer
            .cloned()
            .unwrap_or_else(|| RunningStat::new(self.policy.obs_dim));
        Ok((sampler, snaps, stat))
    }

    fn params<'b>(&'b self, stat: &'b RunningStat) -> RolloutParams<'b> {
        RolloutParams {
            policy: self.policy,
            theta: self.theta,
            normalizer: stat,
            normalize_obs: self.normalizer.is_some(),
            table: self.table,
            master_seed: self.noise_seed,
            sigma: self.sigma,
            rollout_length: self.rollout_length,
            segments_per_worker: self.segments_per_worker,
        }
    }

    fn restore(sampler: &mut Sampler, snaps: &[WorkerSnapshot]) -> Result<()> {
        for (w, s) in sampler.workers_mut().iter_mut().zip(snaps) {
            w.restore(s)?;
        }
        Ok(())
    }

    /// Raw-return ES gradients, one per sample.
    pub fn es_samples(&self, count: usize) -> Result<Vec<Vec<f64>>> {
        let (mut sampler, snaps, stat) = self.setup()?;
        let p = self.params(&stat);
        (0..count)
            .map(|s| {
                Self::restore(&mut sampler, &snaps)?;
                let rollouts = sampler.collect_es_iteration(&p, s as u64)?;
                let dirs: Vec<EsDirection> = rollouts
                    .iter()
                    .map(|r| EsDirection::from_rollout(r, self.gamma))
                    .collect();
                es_gradient(&dirs, self.table, self.sigma, false)
            })
            .collect()
    }

    /// ZOAC gradients under the given critic, plus the largest `|V|` seen.
    pub fn zoac_samples<V: ValueFunction + ?Sized>(&self, critic: &V, count: usize) -> Result<(Vec<Vec<f64>>, f64)> {
        let (mut sampler, snaps, stat) = self.setup()?;
        let p = self.params(&stat);
        let mut phi = 0.0f64;
        let mut out = Vec::with_capacity(count);
        for s in 0..count {
            Self::restore(&mut sampler, &snaps)?;
            let batch = sampler.collect_iteration(&p, s as u64)?;
            let values = segment_values(&batch, critic);
            phi = phi.max(max_abs_value(&values));
            let mut advs = compute_segment_advantages(&batch, &values, self.gamma, self.lambda);
            if self.normalize_advantages {
                advs = normalize_advantages(&advs);
            }
            out.push(zoac_gradient(&advs, self.table, self.sigma)?);
        }
        Ok((out, phi))
    }

    fn bound_params(&self, phi: f64) -> Result<BoundParams> {
        let env = self.env.build()?;
        Ok(BoundParams {
            alpha: env.reward_bound(),
            phi,
            gamma: self.gamma,
            rollout_length: self.rollout_length,
            segments_per_worker: self.segments_per_worker,
            workers: self.workers,
            sigma: self.sigma,
            dim: self.theta.len(),
        })
    }

    pub fn es_report(&self, count: usize) -> Result<VarianceReport> {
        let samples = self.es_samples(count)?;
        let params = self.bound_params(0.0)?;
        report(EstimatorKind::Es, &samples, params.es_bound()?, params)
    }

    pub fn zoac_report<V: ValueFunction + ?Sized>(&self, critic: &V, count: usize) -> Result<VarianceReport> {
        let (samples, phi) = self.zoac_samples(critic, count)?;
        let params = self.bound_params(phi)?;
        report(EstimatorKind::Zoac, &samples, params.zoac_bound()?, params)
    }
}

fn report(estimator: EstimatorKind, samples: &[Vec<f64>], bound: f64, params: BoundParams) -> Result<VarianceReport> {
    let norm = samples
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>()
        / samples.len().max(1) as f64;
    Ok(VarianceReport {
        estimator,
        empirical_variance: estimator_variance(samples)?,
        bound,
        samples: samples.len(),
        params,
        mean_gradient_norm: norm,
    })
}

/// Critic error against realized returns of the noise-free policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueGap {
    /// Mean of `V(s) - G(s)` over visited states.
    pub gap: f64,
    /// Mean of `|G(s)|` over the same states.
    pub mean_abs_return: f64,
    pub states: usize,
}

/// Compares the critic with the discounted reward-to-go from every state of
/// the given noise-free episodes.
pub fn value_gap_from_episodes<V: ValueFunction + ?Sized>(critic: &V, episodes: &[Episode], gamma: f64) -> ValueGap {
    let mut sum_gap = 0.0;
    let mut sum_abs = 0.0;
    let mut states = 0usize;
    for ep in episodes {
        for (obs, g) in ep.observations.iter().zip(ep.rewards_to_go(gamma)) {
            sum_gap += critic.value(obs) - g;
            sum_abs += g.abs();
            states += 1;
        }
    }
    let n = states.max(1) as f64;
    ValueGap {
        gap: sum_gap / n,
        mean_abs_return: sum_abs / n,
        states,
    }
}

/// Rolls out `policy(theta)` for `episodes` episodes and reports the value
/// gap over the visited states.
#[allow(clippy::too_many_arguments)]
pub fn value_gap<V: ValueFunction + ?Sized>(
    critic: &V,
    policy: &PolicySpec,
    theta: &[f64],
    env: &EnvSpec,
    normalizer: Option<&RunningStat>,
    episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<ValueGap> {
    let mut env = env.build()?;
    let eps = (0..episodes)
        .map(|e| {
            let mut stream = RngStream::derive(seed, &[e as u64]);
            run_episode(&mut env, policy, theta, normalizer, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(value_gap_from_episodes(critic, &eps, gamma))
}
