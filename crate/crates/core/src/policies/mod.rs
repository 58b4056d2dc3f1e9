//! Deterministic policies driven entirely by a flat parameter vector.
//!
//! Layouts (per layer, in order):
//! - linear: `act x obs` weights, row-major, no bias;
//! - mlp: dense weights (row-major) then biases;
//! - toeplitz: first column (`out`), first-row tail (`in - 1`), biases (`out`);
//! - masked: weights, "active" mask logits, "pruned" mask logits (each
//!   `out x in`, row-major), then biases.
//!
//! Hidden layers apply plain layer normalization (when enabled) followed by
//! `tanh`. The final output is squashed with `tanh` and scaled to the action
//! limit unless `squash` is off, in which case the environment clips it.

mod masked;
mod toeplitz;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

pub use masked::{mask_gate, mask_matrix, mask_usage, masked_forward};
pub use toeplitz::{toeplitz_expand, toeplitz_weight_count};

use crate::error::{check_len, Error, Result};
use crate::numkit::{forward_flat, Activation, LayerNormMode, MlpArch, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Linear,
    Mlp,
    Toeplitz,
    Masked,
}

impl PolicyKind {
    pub const NAMES: [&'static str; 4] = ["linear", "mlp", "toeplitz", "masked"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Hidden widths for the neural kinds.
    pub hidden: Vec<usize>,
    /// Softmax temperature of the mask (masked kind only).
    pub mask_temperature: f64,
    pub layer_norm: bool,
    pub squash: bool,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Linear,
            obs_dim: 2,
            act_dim: 1,
            hidden: vec![64, 64],
            mask_temperature: 0.01,
            layer_norm: true,
            squash: true,
        }
    }
}

/// Flat policy parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl PolicySpec {
    pub fn linear(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            kind: PolicyKind::Linear,
            obs_dim,
            act_dim,
            ..Default::default()
        }
    }

    pub fn neural(kind: PolicyKind, obs_dim: usize, act_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            kind,
            obs_dim,
            act_dim,
            hidden,
            ..Default::default()
        }
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.obs_dim];
        if self.kind != PolicyKind::Linear {
            w.extend_from_slice(&self.hidden);
        }
        w.push(self.act_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(Error::InvalidConfig("policy dimensions must be positive".into()));
        }
        if self.kind != PolicyKind::Linear && self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.kind == PolicyKind::Masked && !(self.mask_temperature > 0.0) {
            return Err(Error::InvalidConfig("mask temperature must be positive".into()));
        }
        Ok(())
    }

    fn layer_param_count(&self, fan_in: usize, fan_out: usize) -> usize {
        match self.kind {
            PolicyKind::Linear => fan_in * fan_out,
            PolicyKind::Mlp => fan_in * fan_out + fan_out,
            PolicyKind::Toeplitz => toeplitz_weight_count(fan_out, fan_in) + fan_out,
            PolicyKind::Masked => 3 * fan_in * fan_out + fan_out,
        }
    }

    /// Total parameter dimension `d`.
    pub fn param_count(&self) -> usize {
        self.widths()
            .windows(2)
            .map(|w| self.layer_param_count(w[0], w[1]))
            .sum()
    }

    fn mlp_arch(&self) -> MlpArch {
        let ln = if self.layer_norm {
            LayerNormMode::Plain
        } else {
            LayerNormMode::Off
        };
        MlpArch {
            sizes: self.widths(),
            activation: Activation::Tanh,
            layer_norm: ln,
        }
    }

    /// Starting parameters: zeros for linear policies (the usual random-search
    /// convention); scaled Gaussian weights with zero biases and zero mask
    /// logits for the neural kinds.
    pub fn initial_params(&self, stream: &mut RngStream) -> ParamVector {
        let mut theta = vec![0.0; self.param_count()];
        if self.kind == PolicyKind::Linear {
            return ParamVector(theta);
        }
        let mut offset = 0;
        for w in self.widths().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = match self.kind {
                PolicyKind::Toeplitz => toeplitz_weight_count(fan_out, fan_in),
                _ => fan_in * fan_out,
            };
            let scale = (1.0 / fan_in as f64).sqrt();
            let slice = &mut theta[offset..offset + weights];
            stream.fill_gaussian(slice);
            slice.iter_mut().for_each(|x| *x *= scale);
            offset += self.layer_param_count(fan_in, fan_out);
        }
        ParamVector(theta)
    }
}

/// Network output before squashing.
pub fn policy_output(spec: &PolicySpec, theta: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
    check_len(spec.param_count(), theta.len())?;
    check_len(spec.obs_dim, obs.len())?;
    match spec.kind {
        PolicyKind::Linear => Ok(theta
            .chunks_exact(spec.obs_dim)
            .map(|row| row.iter().zip(obs).map(|(w, x)| w * x).sum())
            .collect()),
        PolicyKind::Mlp => forward_flat(&spec.mlp_arch(), theta, obs),
        PolicyKind::Toeplitz | PolicyKind::Masked => structured_forward(spec, theta, obs),
    }
}

fn structured_forward(spec: &PolicySpec, theta: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
    let widths = spec.widths();
    let last = widths.len() - 2;
    let mut h = obs.to_vec();
    let mut offset = 0;
    for (l, w) in widths.windows(2).enumerate() {
        let (n, m) = (w[0], w[1]);
        let count = spec.layer_param_count(n, m);
        let params = &theta[offset..offset + count];
        offset += count;
        let (mut z, bias) = match spec.kind {
            PolicyKind::Toeplitz => {
                let nw = toeplitz_weight_count(m, n);
                (toeplitz::toeplitz_matvec(m, n, &params[..nw], &h)?, &params[nw..])
            }
            _ => {
                let mn = m * n;
                let z = masked::masked_matvec(
                    m,
                    n,
                    &params[..mn],
                    &params[mn..2 * mn],
                    &params[2 * mn..3 * mn],
                    spec.mask_temperature,
                    &h,
                );
                (z, &params[3 * mn..])
            }
        };
        z.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        if l < last {
            if spec.layer_norm {
                let ones = vec![1.0; m];
                let zeros = vec![0.0; m];
                z = crate::numkit::layer_norm(&z, &ones, &zeros)?;
            }
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = z;
    }
    Ok(h)
}

/// Deterministic action for an already-normalized observation.
pub fn policy_act(spec: &PolicySpec, theta: &[f64], obs: &[f64], action_limit: f64) -> Result<Vec<f64>> {
    let mut out = policy_output(spec, theta, obs)?;
    if spec.squash {
        out.iter_mut().for_each(|v| *v = action_limit * v.tanh());
    }
    Ok(out)
}

/// Fraction of active weights over every masked layer of `theta`.
pub fn policy_mask_usage(spec: &PolicySpec, theta: &[f64]) -> Result<f64> {
    if spec.kind != PolicyKind::Masked {
        return Err(Error::InvalidArgument("mask usage needs a masked policy".into()));
    }
    check_len(spec.param_count(), theta.len())?;
    let mut offset = 0;
    let (mut total, mut count) = (0.0, 0usize);
    for w in spec.widths().windows(2) {
        let (n, m) = (w[0], w[1]);
        let mn = m * n;
        let p = &theta[offset..];
        for k in 0..mn {
            total += mask_gate(p[mn + k], p[2 * mn + k], spec.mask_temperature);
        }
        count += mn;
        offset += spec.layer_param_count(n, m);
    }
    Ok(total / count as f64)
}
