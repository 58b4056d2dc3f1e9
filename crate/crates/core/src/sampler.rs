//! Iteration-synchronous rollout collection.
//!
//! Each of `n` workers runs `H` segments of at most `N` steps. A fresh noise
//! offset is drawn at the start of every segment from a stream keyed by
//! `(master_seed, iteration, worker, segment)`, so the result never depends on
//! thread scheduling. When an episode ends inside a segment the segment is cut
//! short, the environment is reset, and the next segment starts from the reset
//! state. Environments persist across iterations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{DoneReason, Env, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::noise::{NoiseIndex, NoiseTable};
use crate::numkit::{RngStream, RunningStat};
use crate::policies::{policy_act, PolicySpec};

pub(crate) const NOISE_STREAM_TAG: u64 = 0x4E4F_4953;
pub(crate) const ENV_STREAM_TAG: u64 = 0x454E_5653;

/// One perturbed-policy rollout chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub worker: usize,
    pub j: usize,
    pub noise_idx: NoiseIndex,
    /// Normalized observations `s_0 .. s_k`; the last one is the bootstrap state.
    pub observations: Vec<Vec<f64>>,
    /// Raw observations at which the `k` actions were taken.
    pub raw_observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminal: bool,
    pub timeout: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Whether the episode ended at the last transition.
    pub fn ends_episode(&self) -> bool {
        self.terminal || self.timeout
    }
}

/// Everything collected in one iteration, ordered by `(worker, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationBatch {
    pub iteration: u64,
    pub workers: usize,
    pub segments: Vec<Segment>,
}

impl IterationBatch {
    pub fn transitions(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn raw_observations(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.segments.iter().flat_map(|s| s.raw_observations.iter())
    }

    /// Segments of one worker, contiguous in time except across resets.
    pub fn worker_segments(&self, worker: usize) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.worker == worker)
    }

    /// Splits the batch into trajectory fragments: maximal runs of consecutive
    /// segments of one worker not interrupted by an episode end. Returned as
    /// index ranges into `segments`.
    pub fn fragments(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            let last_of_worker = self
                .segments
                .get(i + 1)
                .map_or(true, |next| next.worker != seg.worker);
            if seg.ends_episode() || last_of_worker {
                out.push(start..i + 1);
                start = i + 1;
            }
        }
        out
    }
}

/// A single episode-wise perturbed trajectory (evolution-strategies style).
#[derive(Debug, Clone, PartialEq)]
pub struct EsRollout {
    pub worker: usize,
    pub noise_idx: NoiseIndex,
    pub rewards: Vec<f64>,
    pub raw_observations: Vec<Vec<f64>>,
    pub terminal: bool,
}

/// Rollout knobs shared by both collection strategies.
#[derive(Debug, Clone, Copy)]
pub struct RolloutParams<'a> {
    pub policy: &'a PolicySpec,
    pub theta: &'a [f64],
    /// Observation statistics frozen for the duration of the collection.
    pub normalizer: &'a RunningStat,
    pub normalize_obs: bool,
    pub table: &'a NoiseTable,
    /// Keys the per-segment noise streams.
    pub master_seed: u64,
    pub sigma: f64,
    /// Steps per segment `N`.
    pub rollout_length: usize,
    /// Segments per worker `H`.
    pub segments_per_worker: usize,
}

impl RolloutParams<'_> {
    fn observe(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if self.normalize_obs {
            self.normalizer.normalize(raw)
        } else {
            Ok(raw.to_vec())
        }
    }
}

/// Persistent per-worker state: its environment, reset stream and the
/// observation the next step starts from (`None` when a reset is due).
#[derive(Debug, Clone)]
pub struct Worker {
    pub id: usize,
    pub env: Env,
    pub reset_stream: RngStream,
    pub current: Option<Vec<f64>>,
}

/// Serializable worker state for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSnapshot {
    pub reset_counter: u64,
    pub has_current: bool,
    pub current: Vec<f64>,
    pub env: Vec<f64>,
}

impl Worker {
    pub fn new(id: usize, env: &EnvSpec, master_seed: u64) -> Result<Self> {
        Ok(Self {
            id,
            env: env.build()?,
            reset_stream: RngStream::derive(master_seed, &[ENV_STREAM_TAG, id as u64]),
            current: None,
        })
    }

    fn observation_or_reset(&mut self) -> Vec<f64> {
        match self.current.take() {
            Some(obs) => obs,
            None => self.env.reset(&mut self.reset_stream).observation,
        }
    }

    pub fn snapshot(&self) -> WorkerSnapshot {
        WorkerSnapshot {
            reset_counter: self.reset_stream.counter,
            has_current: self.current.is_some(),
            current: self.current.clone().unwrap_or_default(),
            env: self.env.snapshot(),
        }
    }

    pub fn restore(&mut self, snap: &WorkerSnapshot) -> Result<()> {
        self.reset_stream.counter = snap.reset_counter;
        self.current = snap.has_current.then(|| snap.current.clone());
        self.env.restore(&snap.env)
    }

    fn run_segments(&mut self, p: &RolloutParams<'_>, iteration: u64) -> Result<Vec<Segment>> {
        let limit = self.env.action_limit();
        let mut segments = Vec::with_capacity(p.segments_per_worker);
        for j in 0..p.segments_per_worker {
            // Drawn even if the segment is cut short, so index consumption is
            // independent of episode boundaries.
            let mut key = noise_stream(p, iteration, self.id, j);
            let noise_idx = p.table.draw_index(&mut key);
            let perturbed = p.table.perturb(p.theta, noise_idx, p.sigma)?;

            let mut raw = self.observation_or_reset();
            let mut seg = Segment {
                worker: self.id,
                j,
                noise_idx,
                observations: vec![p.observe(&raw)?],
                raw_observations: Vec::with_capacity(p.rollout_length),
                actions: Vec::with_capacity(p.rollout_length),
                rewards: Vec::with_capacity(p.rollout_length),
                terminal: false,
                timeout: false,
            };
            let mut ended = false;
            for _ in 0..p.rollout_length {
                let obs = seg.observations.last().unwrap();
                let action = policy_act(p.policy, &perturbed, obs, limit)?;
                let step = self.env.step(&action)?;
                seg.raw_observations.push(std::mem::replace(&mut raw, step.observation));
                seg.observations.push(p.observe(&raw)?);
                seg.actions.push(action);
                seg.rewards.push(step.reward);
                match step.done_reason {
                    DoneReason::Running => {}
                    DoneReason::Terminal => seg.terminal = true,
                    DoneReason::Timeout => seg.timeout = true,
                }
                if step.done {
                    ended = true;
                    break;
                }
            }
            if !ended {
                self.current = Some(raw);
            }
            segments.push(seg);
        }
        Ok(segments)
    }

    fn run_episode(&mut self, p: &RolloutParams<'_>, iteration: u64) -> Result<EsRollout> {
        let limit = self.env.action_limit();
        let mut key = noise_stream(p, iteration, self.id, 0);
        let noise_idx = p.table.draw_index(&mut key);
        let perturbed = p.table.perturb(p.theta, noise_idx, p.sigma)?;
        let budget = p.rollout_length * p.segments_per_worker;
        // Episode-wise perturbation always starts a fresh episode.
        self.current = None;
        let mut raw = self.observation_or_reset();
        let mut out = EsRollout {
            worker: self.id,
            noise_idx,
            rewards: Vec::with_capacity(budget),
            raw_observations: Vec::with_capacity(budget),
            terminal: false,
        };
        for _ in 0..budget {
            let obs = p.observe(&raw)?;
            let action = policy_act(p.policy, &perturbed, &obs, limit)?;
            let step = self.env.step(&action)?;
            out.raw_observations.push(std::mem::replace(&mut raw, step.observation));
            out.rewards.push(step.reward);
            if step.done {
                out.terminal = step.done_reason == DoneReason::Terminal;
                break;
            }
        }
        Ok(out)
    }
}

fn noise_stream(p: &RolloutParams<'_>, iteration: u64, worker: usize, j: usize) -> RngStream {
    RngStream::derive(
        p.master_seed,
        &[NOISE_STREAM_TAG, iteration, worker as u64, j as u64],
    )
}

/// The worker pool plus the thread pool it runs on.
pub struct Sampler {
    workers: Vec<Worker>,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sampler")
            .field("workers", &self.workers.len())
            .field("threads", &self.pool.current_num_threads())
            .finish()
    }
}

impl Sampler {
    /// `threads == 0` lets rayon pick.
    pub fn new(env: &EnvSpec, workers: usize, master_seed: u64, threads: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidConfig("need at least one worker".into()));
        }
        let workers = (0..workers)
            .map(|i| Worker::new(i, env, master_seed))
            .collect::<Result<Vec<_>>>()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Self { workers, pool })
    }

    pub fn workers(&self) -> &[Worker] {
        &self.workers
    }

    pub fn workers_mut(&mut self) -> &mut [Worker] {
        &mut self.workers
    }

    /// Timestep-wise perturbed collection: `H` segments per worker.
    pub fn collect_iteration(&mut self, p: &RolloutParams<'_>, iteration: u64) -> Result<IterationBatch> {
        check_params(p)?;
        let per_worker: Vec<Vec<Segment>> = self.pool.install(|| {
            self.workers
                .par_iter_mut()
                .map(|w| {
                    w.run_segments(p, iteration).map_err(|e| Error::Worker {
                        worker: w.id,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(IterationBatch {
            iteration,
            workers: self.workers.len(),
            segments: per_worker.into_iter().flatten().collect(),
        })
    }

    /// Episode-wise perturbed collection: one fresh episode of at most
    /// `N * H` steps per worker, one noise offset each.
    pub fn collect_es_iteration(&mut self, p: &RolloutParams<'_>, iteration: u64) -> Result<Vec<EsRollout>> {
        check_params(p)?;
        self.pool.install(|| {
            self.workers
                .par_iter_mut()
                .map(|w| {
                    w.run_episode(p, iteration).map_err(|e| Error::Worker {
                        worker: w.id,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
    }
}

fn check_params(p: &RolloutParams<'_>) -> Result<()> {
    if p.rollout_length == 0 || p.segments_per_worker == 0 {
        return Err(Error::InvalidConfig("rollout length and segments per worker must be positive".into()));
    }
    if p.table.dim() != p.theta.len() {
        return Err(Error::LengthMismatch {
            expected: p.table.dim(),
            actual: p.theta.len(),
        });
    }
    Ok(())
}

/// A noise-free episode of the unperturbed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Observations (normalized when a normalizer was given) at which each
    /// action was taken.
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminal: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Discounted reward-to-go from every visited state.
    pub fn rewards_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut g = 0.0;
        for t in (0..self.len()).rev() {
            g = self.rewards[t] + gamma * g;
            out[t] = g;
        }
        out
    }
}

/// Runs `policy(theta)` from a fresh reset until the episode ends.
pub fn run_episode(
    env: &mut Env,
    policy: &PolicySpec,
    theta: &[f64],
    normalizer: Option<&RunningStat>,
    reset_stream: &mut RngStream,
) -> Result<Episode> {
    let limit = env.action_limit();
    let mut raw = env.reset(reset_stream).observation;
    let mut ep = Episode {
        observations: Vec::new(),
        rewards: Vec::new(),
        terminal: false,
    };
    loop {
        let obs = match normalizer {
            Some(stat) => stat.normalize(&raw)?,
            None => raw,
        };
        let action = policy_act(policy, theta, &obs, limit)?;
        let step = env.step(&action)?;
        ep.observations.push(obs);
        ep.rewards.push(step.reward);
        raw = step.observation;
        if step.done {
            ep.terminal = step.done_reason == DoneReason::Terminal;
            return Ok(ep);
        }
    }
}
