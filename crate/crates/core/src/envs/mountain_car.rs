//! Continuous mountain car with the classic-control constants.
//!
//! `v <- clip(v + 0.0015 a - 0.0025 cos(3x), +-0.07)`, `x <- clip(x + v, [-1.2, 0.6])`,
//! velocity zeroed against the left wall. Reward is `-penalty * a^2` per step
//! plus 100 on reaching `x >= 0.45`, which ends the episode.

use serde::{Deserialize, Serialize};

use super::{DoneReason, EnvState, Environment, StepResult};
use crate::error::{check_len, Error, Result};
use crate::numkit::RngStream;

pub const POWER: f64 = 0.0015;
pub const GRAVITY: f64 = 0.0025;
pub const MAX_SPEED: f64 = 0.07;
pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const GOAL_POSITION: f64 = 0.45;
pub const GOAL_REWARD: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MountainCarSpec {
    pub max_steps: u64,
    pub action_penalty: f64,
}

impl Default for MountainCarSpec {
    fn default() -> Self {
        Self {
            max_steps: 999,
            action_penalty: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MountainCar {
    spec: MountainCarSpec,
    position: f64,
    velocity: f64,
    steps: u64,
    done: bool,
}

impl MountainCar {
    pub fn new(spec: MountainCarSpec) -> Self {
        Self {
            spec,
            position: -0.5,
            velocity: 0.0,
            steps: 0,
            done: false,
        }
    }

    /// Places the car at an explicit state (used by tests and tooling).
    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
        self.steps = 0;
        self.done = false;
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }
}

impl Environment for MountainCar {
    fn obs_dim(&self) -> usize {
        2
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn action_limit(&self) -> f64 {
        1.0
    }

    fn reward_bound(&self) -> f64 {
        GOAL_REWARD + self.spec.action_penalty
    }

    fn reset(&mut self, stream: &mut RngStream) -> EnvState {
        self.position = stream.uniform(-0.6, -0.4);
        self.velocity = 0.0;
        self.steps = 0;
        self.done = false;
        EnvState {
            observation: self.observation(),
            done: false,
            done_reason: DoneReason::Running,
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_len(1, action.len())?;
        let a = super::clip(action[0], 1.0);
        self.velocity += POWER * a - GRAVITY * (3.0 * self.position).cos();
        self.velocity = super::clip(self.velocity, MAX_SPEED);
        self.position = (self.position + self.velocity).clamp(MIN_POSITION, MAX_POSITION);
        if self.position == MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        self.steps += 1;
        let mut reward = -self.spec.action_penalty * a * a;
        let reason = if self.position >= GOAL_POSITION {
            reward += GOAL_REWARD;
            DoneReason::Terminal
        } else if self.steps >= self.spec.max_steps {
            DoneReason::Timeout
        } else {
            DoneReason::Running
        };
        self.done = reason != DoneReason::Running;
        Ok(StepResult::new(self.observation(), reward, reason))
    }

    fn snapshot(&self) -> Vec<f64> {
        vec![
            self.position,
            self.velocity,
            self.steps as f64,
            if self.done { 1.0 } else { 0.0 },
        ]
    }

    fn restore(&mut self, state: &[f64]) -> Result<()> {
        check_len(4, state.len())?;
        self.position = state[0];
        self.velocity = state[1];
        self.steps = state[2] as u64;
        self.done = state[3] != 0.0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passive_step_from_rest() {
        let mut env = MountainCar::new(MountainCarSpec::default());
        env.set_state(-0.5, 0.0);
        let r = env.step(&[0.0]).unwrap();
        let expected_v = -0.0025 * (-1.5f64).cos();
        assert!((expected_v + 1.7684e-4).abs() < 1e-8);
        assert!((r.observation[1] - expected_v).abs() < 1e-15);
        assert!((r.observation[0] - (-0.5 + expected_v)).abs() < 1e-15);
        assert!((r.observation[0] + 0.50018).abs() < 1e-5);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.done_reason, DoneReason::Running);
    }

    #[test]
    fn reaching_goal_is_terminal() {
        let mut env = MountainCar::new(MountainCarSpec::default());
        env.set_state(0.44, 0.02);
        let r = env.step(&[1.0]).unwrap();
        assert!((r.reward - (100.0 - 0.1)).abs() < 1e-12);
        assert!(r.done);
        assert_eq!(r.done_reason, DoneReason::Terminal);
        assert!(matches!(env.step(&[0.0]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn actions_are_clipped() {
        let mut a = MountainCar::new(MountainCarSpec::default());
        let mut b = a.clone();
        let ra = a.step(&[5.0]).unwrap();
        let rb = b.step(&[1.0]).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn times_out_at_step_limit() {
        let mut env = MountainCar::new(MountainCarSpec {
            max_steps: 3,
            ..Default::default()
        });
        env.reset(&mut RngStream::new(0));
        assert!(!env.step(&[0.0]).unwrap().done);
        assert!(!env.step(&[0.0]).unwrap().done);
        assert_eq!(env.step(&[0.0]).unwrap().done_reason, DoneReason::Timeout);
    }

    #[test]
    fn left_wall_stops_the_car() {
        let mut env = MountainCar::new(MountainCarSpec::default());
        env.set_state(-1.19, -0.07);
        let r = env.step(&[-1.0]).unwrap();
        assert_eq!(r.observation, vec![MIN_POSITION, 0.0]);
    }

    #[test]
    fn resets_are_reproducible_and_uniform() {
        let mut env = MountainCar::new(MountainCarSpec::default());
        let a = env.reset(&mut RngStream::new(42));
        let b = env.reset(&mut RngStream::new(42));
        assert_eq!(a, b);
        let mut stream = RngStream::new(7);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = env.reset(&mut stream);
            assert!((-0.6..-0.4).contains(&s.observation[0]));
            assert_eq!(s.observation[1], 0.0);
            sum += s.observation[0];
        }
        assert!((sum / n as f64 + 0.5).abs() < 0.005);
    }

    #[test]
    fn rewards_respect_declared_bound() {
        let mut env = MountainCar::new(MountainCarSpec::default());
        let mut stream = RngStream::new(1);
        env.reset(&mut stream);
        let alpha = env.reward_bound();
        assert!((alpha - 100.1).abs() < 1e-12);
        for t in 0..999 {
            let r = env.step(&[if t % 60 < 30 { 1.0 } else { -1.0 }]).unwrap();
            assert!(r.reward.abs() <= alpha);
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut env = MountainCar::new(MountainCarSpec::default());
        env.reset(&mut RngStream::new(3));
        env.step(&[0.3]).unwrap();
        let snap = env.snapshot();
        let mut other = MountainCar::new(MountainCarSpec::default());
        other.restore(&snap).unwrap();
        assert_eq!(env.step(&[-0.2]).unwrap(), other.step(&[-0.2]).unwrap());
    }
}
