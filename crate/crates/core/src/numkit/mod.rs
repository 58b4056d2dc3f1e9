//! Deterministic numerical building blocks.

mod adam;
mod mlp;
mod rng;
mod stats;

pub use adam::{adam_step, AdamState};
pub use mlp::{
    forward_flat, layer_norm, Activation, ActivationTrace, LayerNormMode, MlpArch, MlpParams,
    LAYER_NORM_STD_FLOOR,
};
pub(crate) use rng::gaussian_pair;
pub use rng::{mix64, RngStream};
pub use stats::{RunningStat, COLD_START_STD, STD_FLOOR};
