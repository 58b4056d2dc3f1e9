//! Trainer configuration: one TOML document with a flat table per concern.

use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::improvement::BetaSchedule;
use crate::policies::{PolicyKind, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Zoac,
    Es,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algo: Algo,
    pub seed: u64,
    pub iterations: u64,
    /// Evaluate after every `eval_interval` iterations (0 disables).
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Write a checkpoint every this many iterations (0: only first and last).
    pub checkpoint_interval: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Zoac,
            seed: 0,
            iterations: 300,
            eval_interval: 10,
            eval_episodes: 10,
            checkpoint_interval: 50,
            threads: 0,
        }
    }
}

/// Policy section; input and output widths come from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub hidden: Vec<usize>,
    pub mask_temperature: f64,
    pub layer_norm: bool,
    pub squash: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let spec = PolicySpec::default();
        Self {
            kind: spec.kind,
            hidden: spec.hidden,
            mask_temperature: spec.mask_temperature,
            layer_norm: spec.layer_norm,
            squash: spec.squash,
        }
    }
}

impl PolicyConfig {
    pub fn spec(&self, obs_dim: usize, act_dim: usize) -> PolicySpec {
        PolicySpec {
            kind: self.kind,
            obs_dim,
            act_dim,
            hidden: self.hidden.clone(),
            mask_temperature: self.mask_temperature,
            layer_norm: self.layer_norm,
            squash: self.squash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Parallel workers `n`.
    pub workers: usize,
    /// Steps per segment `N`.
    pub rollout_length: usize,
    /// Segments per worker per iteration `H`.
    pub segments_per_worker: usize,
    /// Parameter noise std; defaults to 0.06 for linear and 0.03 for neural policies.
    pub sigma: Option<f64>,
    pub normalize_obs: bool,
    pub noise_table_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            rollout_length: 10,
            segments_per_worker: 16,
            sigma: None,
            normalize_obs: true,
            noise_table_size: crate::noise::DEFAULT_TABLE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    /// `false` replaces the critic with `V == 0`.
    pub enabled: bool,
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Minibatch size `L`.
    pub batch_size: usize,
    /// Passes over the iteration's data `M`.
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hidden: vec![256, 256],
            lr: 3e-4,
            batch_size: 64,
            epochs: 8,
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    pub lr: f64,
    pub normalize_advantages: bool,
    /// Use only the top `b` directions per update.
    pub sift_top: Option<usize>,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Length of the beta anneal; defaults to the run length.
    pub beta_iterations: Option<u64>,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            normalize_advantages: true,
            sift_top: None,
            beta_start: 1.0,
            beta_end: 0.5,
            beta_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsConfig {
    /// Centered-rank fitness shaping.
    pub shaped: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self { shaped: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub run: RunConfig,
    pub env: EnvSpec,
    pub policy: PolicyConfig,
    pub sampler: SamplerConfig,
    pub critic: CriticConfig,
    pub actor: ActorConfig,
    pub es: EsConfig,
}

impl TrainerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn sigma(&self) -> f64 {
        self.sampler.sigma.unwrap_or(match self.policy.kind {
            PolicyKind::Linear => 0.06,
            _ => 0.03,
        })
    }

    pub fn beta_schedule(&self) -> BetaSchedule {
        BetaSchedule {
            start: self.actor.beta_start,
            end: self.actor.beta_end,
            iterations: self.actor.beta_iterations.unwrap_or(self.run.iterations),
        }
    }

    /// Policy spec sized for the configured environment.
    pub fn policy_spec(&self) -> Result<PolicySpec> {
        let env = self.env.build()?;
        Ok(self.policy.spec(env.obs_dim(), env.act_dim()))
    }

    /// Sets one field from its dotted name (`section.field`) and a TOML
    /// literal; bare words are taken as strings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::InvalidConfig(format!("config key `{key}` must look like section.field")))?;
        let parsed = parse_literal(value);
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let table = root
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown config section `{section}`")))?;
        table.insert(field.to_string(), parsed);
        let updated: TrainerConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("{key}: {e}")))?;
        // Fields of an unselected variant are dropped silently on the way
        // back, so check the key survived.
        let check = toml::Value::try_from(&updated).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let known = check.get(section).and_then(|s| s.get(field)).is_some();
        if !known {
            return Err(Error::InvalidConfig(format!("unknown config key `{key}`")));
        }
        *self = updated;
        Ok(())
    }

    /// Checks every field before any work is done.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let s = &self.sampler;
        if s.workers == 0 || s.rollout_length == 0 || s.segments_per_worker == 0 {
            return bad("sampler.workers, rollout_length and segments_per_worker must be positive".into());
        }
        let sigma = self.sigma();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return bad(format!("sampler.sigma must be positive, got {sigma}"));
        }
        let c = &self.critic;
        if !(c.gamma > 0.0 && c.gamma <= 1.0) {
            return bad(format!("critic.gamma must lie in (0, 1], got {}", c.gamma));
        }
        if !(0.0..=1.0).contains(&c.lambda) {
            return bad(format!("critic.lambda must lie in [0, 1], got {}", c.lambda));
        }
        if !(c.lr > 0.0) || c.batch_size == 0 {
            return bad("critic.lr and critic.batch_size must be positive".into());
        }
        if c.hidden.contains(&0) {
            return bad("critic.hidden widths must be positive".into());
        }
        let a = &self.actor;
        if !(a.lr > 0.0) {
            return bad(format!("actor.lr must be positive, got {}", a.lr));
        }
        if let Some(b) = a.sift_top {
            let total = s.workers * s.segments_per_worker;
            if b == 0 || b > total {
                return bad(format!("actor.sift_top must lie in 1..={total}, got {b}"));
            }
        }
        for (name, beta) in [("beta_start", a.beta_start), ("beta_end", a.beta_end)] {
            if !(0.0..=1.0).contains(&beta) {
                return bad(format!("actor.{name} must lie in [0, 1], got {beta}"));
            }
        }
        if self.run.eval_interval > 0 && self.run.eval_episodes == 0 {
            return bad("run.eval_episodes must be positive when evaluating".into());
        }
        let spec = self.policy_spec()?;
        spec.validate()?;
        if s.noise_table_size < spec.param_count() {
            return Err(Error::NoiseTableTooSmall {
                size: s.noise_table_size,
                dim: spec.param_count(),
            });
        }
        Ok(())
    }
}

fn parse_literal(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}
