//! The training loop: collect, update the observation statistics, fit the
//! critic, step the actor. Also evaluation, checkpoints and run directories.

mod checkpoint;
mod config;
mod metrics;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use checkpoint::{AdamMeta, Checkpoint, CheckpointHeader, Dims, RngCounters, TableMeta, MAGIC, SCHEMA_VERSION};
pub use config::{ActorConfig, Algo, CriticConfig, EsConfig, PolicyConfig, RunConfig, SamplerConfig, TrainerConfig};
pub use metrics::{append_metrics, read_metrics, MetricsRecord, MetricsWriter};

use crate::analysis::{value_gap_from_episodes, ValueGap};
use crate::baselines::{es_gradient, EsDirection};
use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::evaluation::{compute_value_targets, critic_update, max_abs_value, segment_values, CriticNet, ZeroValue};
use crate::improvement::{
    advantage_stats, compute_segment_advantages, masked_advantage, normalize_advantages, sift_top_directions,
    zoac_gradient, ActorState,
};
use crate::noise::NoiseTable;
use crate::numkit::{RngStream, RunningStat};
use crate::policies::{policy_mask_usage, PolicyKind, PolicySpec};
use crate::sampler::{run_episode, Episode, RolloutParams, Sampler, WorkerSnapshot};

const TABLE_TAG: u64 = 0x5441_424C;
const INIT_TAG: u64 = 0x494E_4954;
const CRITIC_TAG: u64 = 0x4352_4954;
const EVAL_TAG: u64 = 0x4556_414C;

/// Noise-free rollouts of the current policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub discounted_returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub value_gap: Option<ValueGap>,
}

impl EvalReport {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }
}

/// Runs `episodes` deterministic episodes, episode `e` reset from a stream
/// keyed by `(seed, e)` so repeated calls see the same start states.
pub fn evaluate_policy(
    policy: &PolicySpec,
    theta: &[f64],
    env: &EnvSpec,
    normalizer: Option<&RunningStat>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    let mut env: Env = env.build()?;
    (0..episodes)
        .map(|e| {
            let mut stream = RngStream::derive(seed, &[EVAL_TAG, e as u64]);
            run_episode(&mut env, policy, theta, normalizer, &mut stream)
        })
        .collect()
}

pub struct Trainer {
    config: TrainerConfig,
    policy: PolicySpec,
    table: NoiseTable,
    sampler: Sampler,
    actor: ActorState,
    critic: Option<CriticNet>,
    normalizer: RunningStat,
    critic_stream: RngStream,
    iteration: u64,
    env_steps: u64,
    phi: f64,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("iteration", &self.iteration)
            .field("env_steps", &self.env_steps)
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.run.seed;
        let policy = config.policy_spec()?;
        let table_seed = RngStream::derive(seed, &[TABLE_TAG]).next_u64();
        let table = NoiseTable::create(table_seed, config.sampler.noise_table_size, policy.param_count())?;
        let sampler = Sampler::new(&config.env, config.sampler.workers, seed, config.run.threads)?;
        let theta = policy.initial_params(&mut RngStream::derive(seed, &[INIT_TAG]));
        let actor = ActorState::new(theta, config.actor.lr, config.sigma())?;
        let c = &config.critic;
        let critic = if config.run.algo == Algo::Zoac && c.enabled {
            let mut init = RngStream::derive(seed, &[CRITIC_TAG, 0]);
            Some(CriticNet::new(policy.obs_dim, &c.hidden, c.lr, c.gamma, c.lambda, &mut init)?)
        } else {
            None
        };
        Ok(Self {
            normalizer: RunningStat::new(policy.obs_dim),
            critic_stream: RngStream::derive(seed, &[CRITIC_TAG, 1]),
            config,
            policy,
            table,
            sampler,
            actor,
            critic,
            iteration: 0,
            env_steps: 0,
            phi: 0.0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn policy(&self) -> &PolicySpec {
        &self.policy
    }

    pub fn theta(&self) -> &[f64] {
        &self.actor.theta
    }

    pub fn actor(&self) -> &ActorState {
        &self.actor
    }

    pub fn critic(&self) -> Option<&CriticNet> {
        self.critic.as_ref()
    }

    pub fn normalizer(&self) -> &RunningStat {
        &self.normalizer
    }

    pub fn table(&self) -> &NoiseTable {
        &self.table
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// The statistics used for observations, if normalization is on.
    pub fn active_normalizer(&self) -> Option<&RunningStat> {
        self.config.sampler.normalize_obs.then_some(&self.normalizer)
    }

    /// One full iteration; evaluates when the interval says so.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let start = Instant::now();
        let mut record = match self.config.run.algo {
            Algo::Zoac => self.zoac_iteration()?,
            Algo::Es => self.es_iteration()?,
        };
        self.iteration += 1;
        record.iteration = self.iteration;
        record.env_steps = self.env_steps;
        let every = self.config.run.eval_interval;
        if every > 0 && self.iteration % every == 0 {
            let eval = self.evaluate()?;
            record.eval_mean_return = Some(eval.mean_return());
            record.value_gap = eval.value_gap.map(|g| g.gap);
            record.eval_returns = Some(eval.returns);
            record.eval_discounted_returns = Some(eval.discounted_returns);
        }
        record.wall_time = start.elapsed().as_secs_f64();
        Ok(record)
    }

    fn blank_record(&self) -> MetricsRecord {
        MetricsRecord {
            iteration: 0,
            env_steps: 0,
            eval_mean_return: None,
            eval_returns: None,
            eval_discounted_returns: None,
            critic_loss: None,
            grad_norm: 0.0,
            adv_mean: 0.0,
            adv_std: 0.0,
            value_gap: None,
            phi: None,
            mask_usage: None,
            beta: None,
            wall_time: 0.0,
        }
    }

    fn zoac_iteration(&mut self) -> Result<MetricsRecord> {
        let params = rollout_params(&self.config, &self.policy, &self.actor, &self.normalizer, &self.table);
        let batch = self.sampler.collect_iteration(&params, self.iteration)?;
        self.env_steps += batch.transitions() as u64;
        if self.config.sampler.normalize_obs {
            let raw: Vec<&Vec<f64>> = batch.raw_observations().collect();
            self.normalizer.update(&raw)?;
        }

        let (gamma, lambda) = (self.config.critic.gamma, self.config.critic.lambda);
        let values = match &self.critic {
            Some(c) => segment_values(&batch, c),
            None => segment_values(&batch, &ZeroValue),
        };
        let mut record = self.blank_record();
        let mut advs = compute_segment_advantages(&batch, &values, gamma, lambda);
        (record.adv_mean, record.adv_std) = advantage_stats(&advs);

        if let Some(critic) = &mut self.critic {
            self.phi = self.phi.max(max_abs_value(&values));
            record.phi = Some(self.phi);
            let targets = compute_value_targets(&batch, &values, gamma, lambda);
            let c = &self.config.critic;
            let report = critic_update(critic, &targets, c.batch_size, c.epochs, &mut self.critic_stream)?;
            record.critic_loss = report.epoch_losses.last().copied();
        }

        if self.config.actor.normalize_advantages {
            advs = normalize_advantages(&advs);
        }
        if self.policy.kind == PolicyKind::Masked {
            let beta = self.config.beta_schedule().value(self.iteration);
            for a in &mut advs {
                let perturbed = self.table.perturb(&self.actor.theta, a.noise_idx, self.actor.sigma)?;
                let usage = policy_mask_usage(&self.policy, &perturbed)?;
                a.advantage = masked_advantage(a.advantage, usage, beta);
            }
            record.beta = Some(beta);
            record.mask_usage = Some(policy_mask_usage(&self.policy, &self.actor.theta)?);
        }
        if let Some(b) = self.config.actor.sift_top {
            advs = sift_top_directions(&advs, b)?;
        }
        let grad = zoac_gradient(&advs, &self.table, self.actor.sigma)?;
        record.grad_norm = norm(&grad);
        self.actor.ascend(&grad)?;
        Ok(record)
    }

    fn es_iteration(&mut self) -> Result<MetricsRecord> {
        let params = rollout_params(&self.config, &self.policy, &self.actor, &self.normalizer, &self.table);
        let rollouts = self.sampler.collect_es_iteration(&params, self.iteration)?;
        self.env_steps += rollouts.iter().map(|r| r.rewards.len() as u64).sum::<u64>();
        if self.config.sampler.normalize_obs {
            let raw: Vec<&Vec<f64>> = rollouts.iter().flat_map(|r| r.raw_observations.iter()).collect();
            self.normalizer.update(&raw)?;
        }
        let gamma = self.config.critic.gamma;
        let dirs: Vec<EsDirection> = rollouts.iter().map(|r| EsDirection::from_rollout(r, gamma)).collect();
        let mut record = self.blank_record();
        let n = dirs.len() as f64;
        record.adv_mean = dirs.iter().map(|d| d.ret).sum::<f64>() / n;
        record.adv_std = (dirs.iter().map(|d| (d.ret - record.adv_mean).powi(2)).sum::<f64>() / n).sqrt();
        let grad = es_gradient(&dirs, &self.table, self.actor.sigma, self.config.es.shaped)?;
        record.grad_norm = norm(&grad);
        self.actor.ascend(&grad)?;
        Ok(record)
    }

    /// Noise-free evaluation with fixed start states, plus the critic's value
    /// gap on the visited states when a critic exists.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let gamma = self.config.critic.gamma;
        let episodes = evaluate_policy(
            &self.policy,
            &self.actor.theta,
            &self.config.env,
            self.active_normalizer(),
            self.config.run.eval_episodes,
            self.config.run.seed,
        )?;
        Ok(EvalReport {
            returns: episodes.iter().map(Episode::total_reward).collect(),
            discounted_returns: episodes
                .iter()
                .map(|e| e.rewards_to_go(gamma).first().copied().unwrap_or(0.0))
                .collect(),
            lengths: episodes.iter().map(Episode::len).collect(),
            value_gap: self.critic.as_ref().map(|c| value_gap_from_episodes(c, &episodes, gamma)),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let snaps: Vec<WorkerSnapshot> = self.sampler.workers().iter().map(|w| w.snapshot()).collect();
        let (critic, critic_m, critic_v, critic_adam) = match &self.critic {
            Some(c) => (
                c.mlp.flat().to_vec(),
                c.adam.m.clone(),
                c.adam.v.clone(),
                Some(AdamMeta::of(&c.adam)),
            ),
            None => (Vec::new(), Vec::new(), Vec::new(), None),
        };
        Checkpoint {
            header: CheckpointHeader {
                schema_version: SCHEMA_VERSION,
                policy: self.policy.clone(),
                dims: Dims {
                    theta: self.actor.theta.len(),
                    critic: critic.len(),
                    obs: self.policy.obs_dim,
                    workers: snaps.len(),
                },
                iteration: self.iteration,
                env_steps: self.env_steps,
                phi: self.phi,
                sigma: self.actor.sigma,
                actor_adam: AdamMeta::of(&self.actor.adam),
                critic_adam,
                normalizer_count: self.normalizer.count,
                rng: RngCounters {
                    critic_shuffle: self.critic_stream,
                    worker_resets: snaps.iter().map(|s| s.reset_counter).collect(),
                    worker_has_current: snaps.iter().map(|s| s.has_current).collect(),
                },
                noise_table: TableMeta {
                    seed: self.table.seed(),
                    size: self.table.len(),
                },
                config: self.config.clone(),
            },
            theta: self.actor.theta.to_vec(),
            actor_m: self.actor.adam.m.clone(),
            actor_v: self.actor.adam.v.clone(),
            critic,
            critic_m,
            critic_v,
            normalizer_mean: self.normalizer.mean.clone(),
            normalizer_m2: self.normalizer.m2.clone(),
            worker_current: snaps.iter().map(|s| s.current.clone()).collect(),
            worker_env: snaps.into_iter().map(|s| s.env).collect(),
        }
    }

    /// Rebuilds a trainer from `config` and overwrites its state with the
    /// checkpoint. The config may differ from the saved one only in run
    /// length, intervals and thread count.
    pub fn from_checkpoint(config: TrainerConfig, ckpt: &Checkpoint) -> Result<Self> {
        if !resume_compatible(&config, &ckpt.header.config) {
            return Err(Error::InvalidConfig(
                "checkpoint was written with a different configuration".into(),
            ));
        }
        let mut t = Self::new(config)?;
        let h = &ckpt.header;
        if h.policy != t.policy {
            return Err(Error::InvalidConfig("checkpoint policy does not match the config".into()));
        }
        if h.noise_table.seed != t.table.seed() || h.noise_table.size != t.table.len() {
            return Err(Error::InvalidConfig("checkpoint noise table does not match the config".into()));
        }
        if h.dims.workers != t.sampler.workers().len() {
            return Err(Error::InvalidConfig("checkpoint worker count does not match the config".into()));
        }
        t.actor.theta = ckpt.theta.clone().into();
        t.actor.adam = h.actor_adam.with_moments(ckpt.actor_m.clone(), ckpt.actor_v.clone());
        t.actor.sigma = h.sigma;
        match (&mut t.critic, &h.critic_adam) {
            (Some(c), Some(meta)) => {
                crate::error::check_len(c.mlp.flat().len(), ckpt.critic.len())?;
                c.mlp.flat_mut().copy_from_slice(&ckpt.critic);
                c.adam = meta.with_moments(ckpt.critic_m.clone(), ckpt.critic_v.clone());
            }
            (None, None) => {}
            _ => return Err(Error::InvalidConfig("checkpoint critic does not match the config".into())),
        }
        t.normalizer = RunningStat {
            count: h.normalizer_count,
            mean: ckpt.normalizer_mean.clone(),
            m2: ckpt.normalizer_m2.clone(),
        };
        t.critic_stream = h.rng.critic_shuffle;
        for (i, w) in t.sampler.workers_mut().iter_mut().enumerate() {
            w.restore(&WorkerSnapshot {
                reset_counter: h.rng.worker_resets[i],
                has_current: h.rng.worker_has_current[i],
                current: ckpt.worker_current[i].clone(),
                env: ckpt.worker_env[i].clone(),
            })?;
        }
        t.iteration = h.iteration;
        t.env_steps = h.env_steps;
        t.phi = h.phi;
        Ok(t)
    }
}

fn rollout_params<'a>(
    config: &'a TrainerConfig,
    policy: &'a PolicySpec,
    actor: &'a ActorState,
    normalizer: &'a RunningStat,
    table: &'a NoiseTable,
) -> RolloutParams<'a> {
    let s = &config.sampler;
    RolloutParams {
        policy,
        theta: &actor.theta,
        normalizer,
        normalize_obs: s.normalize_obs,
        table,
        master_seed: config.run.seed,
        sigma: actor.sigma,
        rollout_length: s.rollout_length,
        segments_per_worker: s.segments_per_worker,
    }
}

fn resume_compatible(a: &TrainerConfig, b: &TrainerConfig) -> bool {
    let strip = |c: &TrainerConfig| {
        let mut c = c.clone();
        c.run.iterations = 0;
        c.run.eval_interval = 0;
        c.run.eval_episodes = 0;
        c.run.checkpoint_interval = 0;
        c.run.threads = 0;
        c
    };
    strip(a) == strip(b)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Where a run keeps its files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub root: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub checkpoints: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            config: root.join("config.toml"),
            metrics: root.join("metrics.jsonl"),
            checkpoints: root.join("checkpoints"),
        }
    }

    pub fn checkpoint(&self, iteration: u64) -> PathBuf {
        self.checkpoints.join(format!("ckpt_{iteration:06}.zoac"))
    }

    /// The checkpoint with the highest iteration stamp, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        if !self.checkpoints.exists() {
            return Ok(None);
        }
        let mut best: Option<PathBuf> = None;
        let entries = std::fs::read_dir(&self.checkpoints).map_err(|e| Error::io(&self.checkpoints, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&self.checkpoints, e))?.path();
            let is_ckpt = path.extension().is_some_and(|e| e == "zoac");
            if is_ckpt && best.as_ref().is_none_or(|b| path > *b) {
                best = Some(path);
            }
        }
        Ok(best)
    }
}

/// Outcome of [`run_training`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub env_steps: u64,
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub last_eval_mean: Option<f64>,
}

/// Trains to `config.run.iterations`, writing the resolved config, the
/// metrics stream and iteration-stamped checkpoints under `out_dir`. With
/// `resume` the run continues from that checkpoint and the metrics stream is
/// cut back to its iteration.
pub fn run_training(config: TrainerConfig, out_dir: &Path, resume: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let paths = RunPaths::new(out_dir);
    std::fs::create_dir_all(&paths.checkpoints).map_err(|e| Error::io(&paths.checkpoints, e))?;
    std::fs::write(&paths.config, config.to_toml_string()?).map_err(|e| Error::io(&paths.config, e))?;

    let interval = config.run.checkpoint_interval;
    let target = config.run.iterations;
    let (mut trainer, mut writer) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::from_checkpoint(config, &ckpt)?;
            let w = MetricsWriter::resume(&paths.metrics, t.iteration())?;
            (t, w)
        }
        None => {
            let t = Trainer::new(config)?;
            t.checkpoint().save(&paths.checkpoint(0))?;
            (t, MetricsWriter::create(&paths.metrics)?)
        }
    };
    let mut last_eval_mean = None;
    while trainer.iteration() < target {
        let record = trainer.step()?;
        writer.append(&record)?;
        if record.eval_mean_return.is_some() {
            last_eval_mean = record.eval_mean_return;
        }
        if interval > 0 && trainer.iteration() % interval == 0 {
            trainer.checkpoint().save(&paths.checkpoint(trainer.iteration()))?;
        }
    }
    let final_checkpoint = paths.checkpoint(trainer.iteration());
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(RunSummary {
        iterations: trainer.iteration(),
        env_steps: trainer.env_steps(),
        final_checkpoint,
        metrics: paths.metrics,
        last_eval_mean,
    })
}
