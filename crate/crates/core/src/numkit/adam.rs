use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`, in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(self.m.len(), grad.len())?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and optimizer state.
pub fn adam_step(state: &AdamState, params: &[f64], grad: &[f64]) -> Result<(Vec<f64>, AdamState)> {
    let mut next = state.clone();
    let mut out = params.to_vec();
    next.step(&mut out, grad)?;
    Ok((out, next))
}
