//! Stateless quadratic bandit: constant observation `[1]`, reward `-a^2`.
//!
//! With a bias-free linear policy the action equals the single parameter, so a
//! perturbed policy earns `-(theta + sigma * eps)^2` and the Gaussian-smoothed
//! gradient is exactly `-2 theta`.

use super::{DoneReason, EnvState, Environment, StepResult};
use crate::error::{check_len, Error, Result};
use crate::numkit::RngStream;

#[derive(Debug, Clone)]
pub struct QuadraticBandit {
    action_limit: f64,
    horizon: u64,
    steps: u64,
    done: bool,
}

impl QuadraticBandit {
    pub fn new(action_limit: f64, horizon: u64) -> Result<Self> {
        if !(action_limit > 0.0) || horizon == 0 {
            return Err(Error::InvalidArgument(
                "bandit needs a positive action limit and horizon".into(),
            ));
        }
        Ok(Self {
            action_limit,
            horizon,
            steps: 0,
            done: false,
        })
    }
}

impl Environment for QuadraticBandit {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn action_limit(&self) -> f64 {
        self.action_limit
    }

    fn reward_bound(&self) -> f64 {
        self.action_limit * self.action_limit
    }

    fn reset(&mut self, _stream: &mut RngStream) -> EnvState {
        self.steps = 0;
        self.done = false;
        EnvState {
            observation: vec![1.0],
            done: false,
            done_reason: DoneReason::Running,
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_len(1, action.len())?;
        let a = super::clip(action[0], self.action_limit);
        self.steps += 1;
        let reason = if self.steps >= self.horizon {
            DoneReason::Timeout
        } else {
            DoneReason::Running
        };
        self.done = reason != DoneReason::Running;
        Ok(StepResult::new(vec![1.0], -a * a, reason))
    }

    fn snapshot(&self) -> Vec<f64> {
        vec![self.steps as f64, if self.done { 1.0 } else { 0.0 }]
    }

    fn restore(&mut self, state: &[f64]) -> Result<()> {
        check_len(2, state.len())?;
        self.steps = state[0] as u64;
        self.done = state[1] != 0.0;
        Ok(())
    }
}
