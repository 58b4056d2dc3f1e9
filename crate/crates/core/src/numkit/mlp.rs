//! Dense feed-forward networks stored as one flat parameter vector.
//!
//! Layout, layer by layer: weights (row-major, `out x in`), biases, and for
//! hidden layers with affine layer normalization the gains followed by the
//! shifts. Hidden layers compute `act(norm(W x + b))`; the output layer is
//! linear.

use serde::{Deserialize, Serialize};

use super::RngStream;
use crate::error::{check_len, Error, Result};

/// Divisor floor for layer normalization.
pub const LAYER_NORM_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerNormMode {
    Off,
    /// Zero-mean, unit-variance rescaling without learned parameters.
    Plain,
    /// Rescaling followed by a learned per-unit gain and shift.
    Affine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    /// Input width, hidden widths, output width.
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: LayerNormMode,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
    gain: Option<usize>,
    shift: Option<usize>,
    hidden: bool,
}

impl MlpArch {
    pub fn new(sizes: Vec<usize>, activation: Activation, layer_norm: LayerNormMode) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network needs at least two nonzero layer widths, got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes,
            activation,
            layer_norm,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn spans(&self) -> Vec<LayerSpan> {
        let mut offset = 0;
        let last = self.num_layers() - 1;
        (0..self.num_layers())
            .map(|l| {
                let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
                let hidden = l < last;
                let w = offset;
                let b = w + fan_in * fan_out;
                offset = b + fan_out;
                let (gain, shift) = if hidden && self.layer_norm == LayerNormMode::Affine {
                    let g = offset;
                    offset += 2 * fan_out;
                    (Some(g), Some(g + fan_out))
                } else {
                    (None, None)
                };
                LayerSpan {
                    fan_in,
                    fan_out,
                    w,
                    b,
                    gain,
                    shift,
                    hidden,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.spans()
            .last()
            .map(|s| s.b + s.fan_out)
            .unwrap_or(0)
    }
}

/// Network parameters: architecture plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub arch: MlpArch,
    flat: Vec<f64>,
}

/// Intermediate values recorded by [`MlpParams::forward_trace`].
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// Input to every layer (the network input first).
    inputs: Vec<Vec<f64>>,
    /// Normalized pre-activations of hidden layers, when normalization is on.
    normalized: Vec<Option<Vec<f64>>>,
    /// Divisor used by each hidden layer's normalization.
    norm_std: Vec<f64>,
    /// Whether the normalization divisor sat on its floor.
    floored: Vec<bool>,
    pub output: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: MlpArch) -> Self {
        let mut flat = vec![0.0; arch.param_count()];
        for span in arch.spans() {
            if let Some(g) = span.gain {
                flat[g..g + span.fan_out].iter_mut().for_each(|x| *x = 1.0);
            }
        }
        Self { arch, flat }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases, unit gains.
    /// The output layer is further scaled by `output_scale`.
    pub fn init(arch: MlpArch, stream: &mut RngStream, output_scale: f64) -> Self {
        let mut p = Self::zeros(arch);
        let spans = p.arch.spans();
        let last = spans.len() - 1;
        for (l, span) in spans.iter().enumerate() {
            let scale = (1.0 / span.fan_in as f64).sqrt() * if l == last { output_scale } else { 1.0 };
            let w = &mut p.flat[span.w..span.b];
            stream.fill_gaussian(w);
            w.iter_mut().for_each(|x| *x *= scale);
        }
        p
    }

    pub fn from_flat(arch: MlpArch, flat: Vec<f64>) -> Result<Self> {
        check_len(arch.param_count(), flat.len())?;
        Ok(Self { arch, flat })
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.arch.spans()[layer];
        &self.flat[s.w..s.b]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.arch.spans()[layer];
        &self.flat[s.b..s.b + s.fan_out]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward_flat(&self.arch, &self.flat, x)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ActivationTrace> {
        check_len(self.arch.input_dim(), x.len())?;
        let spans = self.arch.spans();
        let mut trace = ActivationTrace {
            inputs: Vec::with_capacity(spans.len()),
            normalized: Vec::with_capacity(spans.len()),
            norm_std: Vec::with_capacity(spans.len()),
            floored: Vec::with_capacity(spans.len()),
            output: Vec::new(),
        };
        let mut h = x.to_vec();
        for span in &spans {
            let mut z = affine(&self.flat, span, &h);
            trace.inputs.push(h);
            if span.hidden {
                if self.arch.layer_norm != LayerNormMode::Off {
                    let (xhat, std, floored) = standardize(&z);
                    z = match (span.gain, span.shift) {
                        (Some(g), Some(s)) => {
                            apply_gain_shift(&xhat, &self.flat[g..g + span.fan_out], &self.flat[s..s + span.fan_out])
                        }
                        _ => xhat.clone(),
                    };
                    trace.normalized.push(Some(xhat));
                    trace.norm_std.push(std);
                    trace.floored.push(floored);
                } else {
                    trace.normalized.push(None);
                    trace.norm_std.push(1.0);
                    trace.floored.push(false);
                }
                z.iter_mut().for_each(|v| *v = self.arch.activation.apply(*v));
            }
            h = z;
        }
        trace.output = h;
        Ok(trace)
    }

    /// Gradient of `output_grad . output` with respect to every parameter, in
    /// the flat layout.
    pub fn backward(&self, trace: &ActivationTrace, output_grad: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.flat.len()];
        self.backward_accumulate(trace, output_grad, &mut grad)?;
        Ok(grad)
    }

    /// As [`backward`](Self::backward), adding into `grad`.
    pub fn backward_accumulate(
        &self,
        trace: &ActivationTrace,
        output_grad: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        check_len(self.arch.output_dim(), output_grad.len())?;
        check_len(self.flat.len(), grad.len())?;
        let spans = self.arch.spans();
        let mut upstream = output_grad.to_vec();
        for (l, span) in spans.iter().enumerate().rev() {
            // `upstream` is dL/d(layer output) here.
            let mut dz = upstream;
            if span.hidden {
                // Activation output of this layer is the next layer's input.
                let act_out = &trace.inputs[l + 1];
                for (d, &y) in dz.iter_mut().zip(act_out) {
                    *d *= self.arch.activation.derivative_from_output(y);
                }
                if let Some(xhat) = &trace.normalized[l] {
                    if let (Some(g), Some(s)) = (span.gain, span.shift) {
                        for k in 0..span.fan_out {
                            grad[g + k] += dz[k] * xhat[k];
                            grad[s + k] += dz[k];
                            dz[k] *= self.flat[g + k];
                        }
                    }
                    dz = standardize_backward(&dz, xhat, trace.norm_std[l], trace.floored[l]);
                }
            }
            let input = &trace.inputs[l];
            let mut next = vec![0.0; span.fan_in];
            for (o, &d) in dz.iter().enumerate() {
                grad[span.b + o] += d;
                let row = span.w + o * span.fan_in;
                for (i, &xi) in input.iter().enumerate() {
                    grad[row + i] += d * xi;
                    next[i] += d * self.flat[row + i];
                }
            }
            upstream = next;
        }
        Ok(())
    }
}

/// Forward pass over an arbitrary parameter slice laid out for `arch`.
pub fn forward_flat(arch: &MlpArch, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len(arch.param_count(), params.len())?;
    check_len(arch.input_dim(), x.len())?;
    let mut h = x.to_vec();
    for span in arch.spans() {
        let mut z = affine(params, &span, &h);
        if span.hidden {
            if arch.layer_norm != LayerNormMode::Off {
                let (xhat, _, _) = standardize(&z);
                z = match (span.gain, span.shift) {
                    (Some(g), Some(s)) => {
                        apply_gain_shift(&xhat, &params[g..g + span.fan_out], &params[s..s + span.fan_out])
                    }
                    _ => xhat,
                };
            }
            z.iter_mut().for_each(|v| *v = arch.activation.apply(*v));
        }
        h = z;
    }
    Ok(h)
}

fn affine(params: &[f64], span: &LayerSpan, x: &[f64]) -> Vec<f64> {
    let w = &params[span.w..span.b];
    let b = &params[span.b..span.b + span.fan_out];
    w.chunks_exact(span.fan_in)
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
        .collect()
}

fn apply_gain_shift(xhat: &[f64], gain: &[f64], shift: &[f64]) -> Vec<f64> {
    xhat.iter()
        .zip(gain)
        .zip(shift)
        .map(|((x, g), s)| g * x + s)
        .collect()
}

/// `(x - mean) / max(std, floor)` with population variance; also returns the
/// divisor and whether the floor was active.
fn standardize(x: &[f64]) -> (Vec<f64>, f64, bool) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let raw = var.sqrt();
    let floored = raw < LAYER_NORM_STD_FLOOR;
    let std = raw.max(LAYER_NORM_STD_FLOOR);
    (x.iter().map(|v| (v - mean) / std).collect(), std, floored)
}

fn standardize_backward(dy: &[f64], xhat: &[f64], std: f64, floored: bool) -> Vec<f64> {
    let n = dy.len() as f64;
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_xhat = if floored {
        0.0
    } else {
        dy.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / n
    };
    dy.iter()
        .zip(xhat)
        .map(|(d, x)| (d - mean_dy - x * mean_dy_xhat) / std)
        .collect()
}

/// Layer normalization of a single vector followed by `gain * y + bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    check_len(x.len(), gain.len())?;
    check_len(x.len(), bias.len())?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let (xhat, _, _) = standardize(x);
    Ok(apply_gain_shift(&xhat, gain, bias))
}
