//! Discounted linear-quadratic regulator with an analytic value oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DoneReason, EnvState, Environment, StepResult};
use crate::error::{check_len, Error, Result};
use crate::numkit::RngStream;

/// Matrices are row-major. Rewards are `-(x'Qx + a'Ra)`; states are clipped
/// to `[-state_limit, state_limit]` and actions to `[-action_limit, action_limit]`,
/// which bounds the reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    pub init_mean: Vec<f64>,
    pub init_std: Vec<f64>,
    pub horizon: u64,
    pub state_limit: f64,
    pub action_limit: f64,
}

impl LqrSpec {
    /// One-dimensional system `x' = a x + b u`.
    pub fn scalar(a: f64, b: f64, q: f64, r: f64, gamma: f64) -> Self {
        Self {
            state_dim: 1,
            action_dim: 1,
            a: vec![a],
            b: vec![b],
            q: vec![q],
            r: vec![r],
            gamma,
            init_mean: vec![0.0],
            init_std: vec![1.0],
            horizon: 200,
            state_limit: 10.0,
            action_limit: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (k, m) = (self.state_dim, self.action_dim);
        let shapes = [
            ("a", self.a.len(), k * k),
            ("b", self.b.len(), k * m),
            ("q", self.q.len(), k * k),
            ("r", self.r.len(), m * m),
            ("init_mean", self.init_mean.len(), k),
            ("init_std", self.init_std.len(), k),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::InvalidConfig(format!(
                    "lqr.{name} has {got} entries, expected {want}"
                )));
            }
        }
        if k == 0 || m == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("lqr dimensions and horizon must be positive".into()));
        }
        if !(self.state_limit > 0.0 && self.action_limit > 0.0) {
            return Err(Error::InvalidConfig("lqr limits must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("lqr.gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        Self::mat(self.state_dim, self.state_dim, &self.a)
    }
    pub fn b_matrix(&self) -> DMatrix<f64> {
        Self::mat(self.state_dim, self.action_dim, &self.b)
    }
    pub fn q_matrix(&self) -> DMatrix<f64> {
        Self::mat(self.state_dim, self.state_dim, &self.q)
    }
    pub fn r_matrix(&self) -> DMatrix<f64> {
        Self::mat(self.action_dim, self.action_dim, &self.r)
    }
}

/// `V(x) = -x' P x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    pub p: DMatrix<f64>,
}

impl QuadraticValue {
    pub fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        -(x.transpose() * &self.p * &x)[(0, 0)]
    }
}

/// Solves `P = Q + K'RK + gamma (A+BK)' P (A+BK)` for the linear policy `a = K x`
/// (`gain` is `action_dim x state_dim`, row-major).
///
/// Uses the doubling form of the fixed-point iteration,
/// `P <- P + M' P M`, `M <- M M` with `M = sqrt(gamma) (A+BK)`, until the
/// increment is below `1e-10` relative to `max(1, |P|)`.
pub fn lqr_value_oracle(spec: &LqrSpec, gain: &[f64]) -> Result<QuadraticValue> {
    spec.validate()?;
    check_len(spec.action_dim * spec.state_dim, gain.len())?;
    let k = DMatrix::from_row_slice(spec.action_dim, spec.state_dim, gain);
    let closed = spec.a_matrix() + spec.b_matrix() * &k;
    let mut m = closed * spec.gamma.sqrt();
    let mut p = spec.q_matrix() + k.transpose() * spec.r_matrix() * &k;
    for _ in 0..64 {
        let delta = m.transpose() * &p * &m;
        p += &delta;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence);
        }
        let scale = p.amax().max(1.0);
        if delta.amax() <= 1e-10 * scale {
            return Ok(QuadraticValue { p });
        }
        m = &m * &m;
    }
    Err(Error::Divergence)
}

#[derive(Debug, Clone)]
pub struct Lqr {
    spec: LqrSpec,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    state: DVector<f64>,
    steps: u64,
    done: bool,
}

impl Lqr {
    pub fn new(spec: LqrSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            a: spec.a_matrix(),
            b: spec.b_matrix(),
            q: spec.q_matrix(),
            r: spec.r_matrix(),
            state: DVector::zeros(spec.state_dim),
            steps: 0,
            done: false,
            spec,
        })
    }

    pub fn spec(&self) -> &LqrSpec {
        &self.spec
    }

    pub fn set_state(&mut self, x: &[f64]) -> Result<()> {
        check_len(self.spec.state_dim, x.len())?;
        self.state = DVector::from_column_slice(x);
        self.steps = 0;
        self.done = false;
        Ok(())
    }
}

impl Environment for Lqr {
    fn obs_dim(&self) -> usize {
        self.spec.state_dim
    }

    fn act_dim(&self) -> usize {
        self.spec.action_dim
    }

    fn action_limit(&self) -> f64 {
        self.spec.action_limit
    }

    fn reward_bound(&self) -> f64 {
        let xl = self.spec.state_limit;
        let al = self.spec.action_limit;
        let q: f64 = self.spec.q.iter().map(|v| v.abs()).sum();
        let r: f64 = self.spec.r.iter().map(|v| v.abs()).sum();
        q * xl * xl + r * al * al
    }

    fn reset(&mut self, stream: &mut RngStream) -> EnvState {
        let limit = self.spec.state_limit;
        let x: Vec<f64> = self
            .spec
            .init_mean
            .iter()
            .zip(&self.spec.init_std)
            .map(|(m, s)| {
                let z = stream.next_gaussian();
                super::clip(m + s * z, limit)
            })
            .collect();
        self.state = DVector::from_vec(x);
        self.steps = 0;
        self.done = false;
        EnvState {
            observation: self.state.as_slice().to_vec(),
            done: false,
            done_reason: DoneReason::Running,
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_len(self.spec.action_dim, action.len())?;
        let u = DVector::from_iterator(
            action.len(),
            action.iter().map(|&a| super::clip(a, self.spec.action_limit)),
        );
        let x = &self.state;
        let cost = (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * &u)[(0, 0)];
        let limit = self.spec.state_limit;
        let next = (&self.a * x + &self.b * &u).map(|v| super::clip(v, limit));
        self.state = next;
        self.steps += 1;
        let reason = if self.steps >= self.spec.horizon {
            DoneReason::Timeout
        } else {
            DoneReason::Running
        };
        self.done = reason != DoneReason::Running;
        Ok(StepResult::new(self.state.as_slice().to_vec(), -cost, reason))
    }

    fn snapshot(&self) -> Vec<f64> {
        let mut s = self.state.as_slice().to_vec();
        s.push(self.steps as f64);
        s.push(if self.done { 1.0 } else { 0.0 });
        s
    }

    fn restore(&mut self, state: &[f64]) -> Result<()> {
        let k = self.spec.state_dim;
        check_len(k + 2, state.len())?;
        self.state = DVector::from_column_slice(&state[..k]);
        self.steps = state[k] as u64;
        self.done = state[k + 1] != 0.0;
        Ok(())
    }
}
