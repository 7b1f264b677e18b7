//! Stacked strided 1-D convolutional encoder, pre-trained by masked
//! reconstruction and frozen for downstream adaptation.

mod masking;
mod pretrain;

pub use masking::mask_spans;
pub use pretrain::{
    contextualize, cosine_reconstruction_loss, init_context_params, pretrain, pretrain_step, PretrainConfig,
    PretrainReport,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv1d_output_len, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bindings, ModelBundle};

pub const PREFIX: &str = "backbone.";
pub const ENCODER_PREFIX: &str = "backbone.enc";
pub const CONTEXT_PREFIX: &str = "backbone.ctx.";
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_channels")]
    pub in_channels: usize,
    #[serde(default = "default_d_enc")]
    pub d_enc: usize,
    #[serde(default = "default_kernels")]
    pub kernels: Vec<usize>,
    #[serde(default = "default_kernels")]
    pub strides: Vec<usize>,
    #[serde(default = "default_groups")]
    pub norm_groups: usize,
}

fn default_channels() -> usize {
    19
}
fn default_d_enc() -> usize {
    64
}
fn default_kernels() -> Vec<usize> {
    vec![3, 2, 2, 2, 2, 2]
}
fn default_groups() -> usize {
    1
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: default_channels(),
            d_enc: default_d_enc(),
            kernels: default_kernels(),
            strides: default_kernels(),
            norm_groups: default_groups(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.len() != 6 || self.strides.len() != 6 {
            return Err(Error::Config("the encoder has exactly six blocks".into()));
        }
        if self.kernels.iter().chain(&self.strides).any(|&v| v == 0) {
            return Err(Error::Config("kernel widths and strides must be positive".into()));
        }
        if self.d_enc == 0 || self.in_channels == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.norm_groups == 0 || self.d_enc % self.norm_groups != 0 {
            return Err(Error::Config(format!(
                "{} norm groups do not divide d_enc = {}",
                self.norm_groups, self.d_enc
            )));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.kernels.len()
    }

    /// Product of block strides.
    pub fn downsampling(&self) -> usize {
        self.strides.iter().product()
    }

    /// Encoded length `T` for input length `len`, applying
    /// `floor((len − k)/s) + 1` per block.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        self.kernels
            .iter()
            .zip(&self.strides)
            .try_fold(len, |l, (&k, &s)| conv1d_output_len(l, k, s))
    }

    /// Smallest input length producing at least one encoded step.
    pub fn min_input_len(&self) -> usize {
        self.kernels
            .iter()
            .zip(&self.strides)
            .rev()
            .fold(1, |need, (&k, &s)| (need - 1) * s + k)
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_blocks())
            .map(|b| {
                let c_in = if b == 0 { self.in_channels } else { self.d_enc };
                self.d_enc * c_in * self.kernels[b] + self.d_enc + 2 * self.d_enc
            })
            .sum()
    }
}

fn block_name(b: usize, field: &str) -> String {
    format!("{ENCODER_PREFIX}{b}.{field}")
}

/// Encoder parameters (trainable until frozen).
pub fn init_encoder_params(cfg: &EncoderConfig, seed: u64) -> Result<ModelBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ModelBundle::new();
    for blk in 0..cfg.n_blocks() {
        let c_in = if blk == 0 { cfg.in_channels } else { cfg.d_enc };
        let k = cfg.kernels[blk];
        let fan_in = c_in * k;
        // Kaiming-uniform keeps activations O(1) through the stack.
        let bound = (3.0f64 / fan_in as f64).sqrt();
        b.insert(block_name(blk, "w"), init::uniform(&mut rng, [cfg.d_enc, c_in, k], bound), true);
        b.insert(block_name(blk, "b"), Tensor::zeros([cfg.d_enc]), true);
        b.insert(block_name(blk, "gamma"), Tensor::full([cfg.d_enc], 1.0), true);
        b.insert(block_name(blk, "beta"), Tensor::zeros([cfg.d_enc]), true);
    }
    Ok(b)
}

/// Encodes an `[channels, len]` signal into a `[d_enc, T]` embedding sequence.
/// Every channel enters the first block jointly as an input channel.
pub fn encode(tape: &mut Tape, x: Var, params: &Bindings, cfg: &EncoderConfig) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != cfg.in_channels {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: shape,
            rhs: vec![cfg.in_channels, cfg.min_input_len()],
        });
    }
    if cfg.output_len(shape[1]).is_none() {
        return Err(Error::TooShort {
            len: shape[1],
            min: cfg.min_input_len(),
        });
    }
    let mut h = x;
    for blk in 0..cfg.n_blocks() {
        let w = params.get(&block_name(blk, "w"))?;
        let b = params.get(&block_name(blk, "b"))?;
        let gamma = params.get(&block_name(blk, "gamma"))?;
        let beta = params.get(&block_name(blk, "beta"))?;
        h = tape.conv1d(h, w, Some(b), cfg.strides[blk], 0)?;
        h = tape.group_norm(h, gamma, beta, cfg.norm_groups, NORM_EPS)?;
        h = tape.gelu(h)?;
    }
    Ok(h)
}

/// Marks every backbone parameter (encoder and pre-training context) frozen.
pub fn freeze(params: &mut ModelBundle) {
    params.set_trainable(PREFIX, false);
}

pub fn unfreeze(params: &mut ModelBundle) {
    params.set_trainable(PREFIX, true);
}
