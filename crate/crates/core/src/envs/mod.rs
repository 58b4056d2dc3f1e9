//! Environment contract and the built-in desk-scale tasks.

mod bandit;
mod lqr;
mod mountain_car;

use serde::{Deserialize, Serialize};

pub use bandit::QuadraticBandit;
pub use lqr::{lqr_value_oracle, Lqr, LqrSpec, QuadraticValue};
pub use mountain_car::{MountainCar, MountainCarSpec};

use crate::error::Result;
use crate::numkit::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Running,
    /// The episode ended inside the task; the successor state is worth zero.
    Terminal,
    /// The step limit was hit; the successor state still has value.
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub done: bool,
    pub done_reason: DoneReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub done_reason: DoneReason,
}

impl StepResult {
    fn new(observation: Vec<f64>, reward: f64, done_reason: DoneReason) -> Self {
        Self {
            observation,
            reward,
            done: done_reason != DoneReason::Running,
            done_reason,
        }
    }
}

/// A resettable episodic task with vector observations and actions.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Actions are clipped to `[-limit, limit]` before the dynamics.
    fn action_limit(&self) -> f64;
    /// Declared bound `alpha` on `|reward|`.
    fn reward_bound(&self) -> f64;
    fn reset(&mut self, stream: &mut RngStream) -> EnvState;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    /// Complete internal state, restorable with [`restore`](Self::restore).
    fn snapshot(&self) -> Vec<f64>;
    fn restore(&mut self, state: &[f64]) -> Result<()>;
}

/// Serializable environment selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    MountainCar(MountainCarSpec),
    Lqr(LqrSpec),
    QuadraticBandit { action_limit: f64, horizon: u64 },
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::MountainCar(MountainCarSpec::default())
    }
}

impl EnvSpec {
    pub fn build(&self) -> Result<Env> {
        Ok(match self {
            EnvSpec::MountainCar(spec) => Env::MountainCar(MountainCar::new(spec.clone())),
            EnvSpec::Lqr(spec) => Env::Lqr(Lqr::new(spec.clone())?),
            EnvSpec::QuadraticBandit {
                action_limit,
                horizon,
            } => Env::QuadraticBandit(QuadraticBandit::new(*action_limit, *horizon)?),
        })
    }
}

/// Built-in environments behind one concrete type.
#[derive(Debug, Clone)]
pub enum Env {
    MountainCar(MountainCar),
    Lqr(Lqr),
    QuadraticBandit(QuadraticBandit),
}

macro_rules! delegate {
    ($self:ident, $env:ident => $body:expr) => {
        match $self {
            Env::MountainCar($env) => $body,
            Env::Lqr($env) => $body,
            Env::QuadraticBandit($env) => $body,
        }
    };
}

impl Environment for Env {
    fn obs_dim(&self) -> usize {
        delegate!(self, e => e.obs_dim())
    }
    fn act_dim(&self) -> usize {
        delegate!(self, e => e.act_dim())
    }
    fn action_limit(&self) -> f64 {
        delegate!(self, e => e.action_limit())
    }
    fn reward_bound(&self) -> f64 {
        delegate!(self, e => e.reward_bound())
    }
    fn reset(&mut self, stream: &mut RngStream) -> EnvState {
        delegate!(self, e => e.reset(stream))
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        delegate!(self, e => e.step(action))
    }
    fn snapshot(&self) -> Vec<f64> {
        delegate!(self, e => e.snapshot())
    }
    fn restore(&mut self, state: &[f64]) -> Result<()> {
        delegate!(self, e => e.restore(state))
    }
}

pub(crate) fn clip(x: f64, limit: f64) -> f64 {
    x.clamp(-limit, limit)
}
