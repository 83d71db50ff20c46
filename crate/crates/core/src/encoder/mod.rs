//! Speech encoder: strided convolution over MFCC frames, a stack of
//! bidirectional GRU layers, additive attention pooling and a linear
//! projection onto the unit sphere of the target embedding space.
//!
//! Conventions are row-vector (`x · W`); every weight is stored `[in, out]`.
//!
//! | name                         | shape        |
//! |------------------------------|--------------|
//! | `conv.weight`                | `[K·D, C]`   |
//! | `conv.bias`                  | `[C]`        |
//! | `gru.<l>.<dir>.w_{z,r,h}`    | `[in_l, H]`  |
//! | `gru.<l>.<dir>.u_{z,r,h}`    | `[H, H]`     |
//! | `gru.<l>.<dir>.b_{z,r,h}`    | `[H]`        |
//! | `attention.w`                | `[2H, A]`    |
//! | `attention.u`                | `[A]`        |
//! | `projection.weight`          | `[2H, E]`    |
//! | `projection.bias`            | `[E]`        |
//!
//! Row `k·D + d` of `conv.weight` is tap `k` of input channel `d`. `<dir>` is
//! `fwd` or `bwd`, `in_1 = C` and `in_l = 2H` above the first layer. The
//! parameter count is therefore
//!
//! ```text
//! C(K·D + 1) + Σ_l 2 · 3H(in_l + H + 1) + A(2H + 1) + E(2H + 1)
//! ```
//!
//! Weights are Xavier-uniform, `U(±sqrt(6 / (fan_in + fan_out)))`, drawn in
//! table order from a ChaCha8 stream seeded with `init_seed` (vectors such as
//! `attention.u` use `fan_out = 1`); biases start at zero.

mod checkpoint;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{EncoderVars, GruVars, SpeechEncoder};

use std::path::PathBuf;

use thiserror::Error;

use crate::autograd::GradError;

/// Encoder layer count the architecture is defined with.
pub const REFERENCE_GRU_LAYERS: usize = 4;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("input has {found} feature columns, encoder expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("input of {frames} frames is shorter than the {kernel}-frame convolution")]
    TooShort { frames: usize, kernel: usize },
    #[error(transparent)]
    Graph(#[from] GradError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint ({reason})")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: corrupt checkpoint ({reason})")]
    Corrupt { path: PathBuf, reason: String },
    #[error("parameter {name}: {reason}")]
    Parameter { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Per direction.
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 39,
            conv_channels: 64,
            conv_kernel: 6,
            conv_stride: 2,
            gru_hidden: 256,
            gru_layers: REFERENCE_GRU_LAYERS,
            embed_dim: 768,
            attention_dim: 128,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            ("input_dim", self.input_dim),
            ("conv_channels", self.conv_channels),
            ("conv_kernel", self.conv_kernel),
            ("conv_stride", self.conv_stride),
            ("gru_hidden", self.gru_hidden),
            ("gru_layers", self.gru_layers),
            ("embed_dim", self.embed_dim),
            ("attention_dim", self.attention_dim),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(EncoderError::InvalidConfig(format!("{name} must be positive")));
            }
            if value > u32::MAX as usize {
                return Err(EncoderError::InvalidConfig(format!("{name} = {value} is too large")));
            }
        }
        Ok(())
    }

    /// Frames after the convolution, or `None` if `frames < conv_kernel`.
    pub fn conv_frames(&self, frames: usize) -> Option<usize> {
        (frames >= self.conv_kernel).then(|| (frames - self.conv_kernel) / self.conv_stride + 1)
    }

    /// Closed-form parameter count (see the module documentation).
    pub fn param_count(&self) -> usize {
        let (c, h, a, e) = (self.conv_channels, self.gru_hidden, self.attention_dim, self.embed_dim);
        let conv = c * (self.conv_kernel * self.input_dim + 1);
        let gru: usize = (0..self.gru_layers)
            .map(|l| {
                let input = if l == 0 { c } else { 2 * h };
                2 * 3 * h * (input + h + 1)
            })
            .sum();
        conv + gru + a * (2 * h + 1) + e * (2 * h + 1)
    }
}

#[cfg(test)]
mod tests;
