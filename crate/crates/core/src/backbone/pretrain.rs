//! Masked-reconstruction pre-training: encoded steps are masked, a one-layer
//! transformer predicts them from context, and the loss is the mean cosine
//! distance between predicted and original vectors at masked steps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode, mask_spans, EncoderConfig, CONTEXT_PREFIX};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bindings, ModelBundle};

const COS_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default = "default_mask_span")]
    pub mask_span: usize,
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
    /// Rows of the learned positional table; the longest encodable sequence.
    #[serde(default = "default_max_positions")]
    pub max_positions: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    /// Diagnostic mode: skip self-attention so each step sees only itself.
    #[serde(default)]
    pub bypass_attention: bool,
}

fn default_mask_rate() -> f64 {
    0.3
}
fn default_mask_span() -> usize {
    2
}
fn default_ff_mult() -> usize {
    4
}
fn default_max_positions() -> usize {
    256
}
fn default_epochs() -> usize {
    2
}
fn default_batch() -> usize {
    4
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for PretrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!("mask_rate {} outside [0, 1)", self.mask_rate)));
        }
        if self.mask_span == 0 || self.batch_size == 0 || self.max_positions == 0 || self.ff_mult == 0 {
            return Err(Error::Config("mask_span, batch_size, ff_mult and max_positions must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self, d: usize) -> usize {
        let ff = self.ff_mult * d;
        d + self.max_positions * d + 4 * (d * d + d) + (d * ff + ff) + (ff * d + d)
    }
}

fn ctx(name: &str) -> String {
    format!("{CONTEXT_PREFIX}{name}")
}

/// Mask vector, positional table and transformer weights.
pub fn init_context_params(d: usize, cfg: &PretrainConfig, seed: u64) -> Result<ModelBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ff = cfg.ff_mult * d;
    let mut b = ModelBundle::new();
    b.insert(ctx("mask_vec"), init::normal(&mut rng, [d], 0.1), true);
    b.insert(ctx("pos"), init::normal(&mut rng, [cfg.max_positions, d], 0.02), true);
    for w in ["wq", "wk", "wv", "wo"] {
        b.insert(ctx(w), init::glorot(&mut rng, [d, d], d, d), true);
        b.insert(ctx(&format!("b{}", &w[1..])), Tensor::zeros([d]), true);
    }
    b.insert(ctx("ff1.w"), init::glorot(&mut rng, [d, ff], d, ff), true);
    b.insert(ctx("ff1.b"), Tensor::zeros([ff]), true);
    b.insert(ctx("ff2.w"), init::glorot(&mut rng, [ff, d], ff, d), true);
    b.insert(ctx("ff2.b"), Tensor::zeros([d]), true);
    Ok(b)
}

fn linear(tape: &mut Tape, x: Var, p: &Bindings, w: &str, b: &str) -> Result<Var> {
    let y = tape.matmul(x, p.get(&ctx(w))?)?;
    tape.add_row(y, p.get(&ctx(b))?)
}

/// One transformer encoder layer over a `[T, d]` sequence: residual
/// single-head scaled dot-product attention, then a residual GELU
/// feed-forward block.
pub fn contextualize(tape: &mut Tape, seq: Var, p: &Bindings, cfg: &PretrainConfig) -> Result<Var> {
    let d = tape.shape(seq)[1];
    let h = if cfg.bypass_attention {
        seq
    } else {
        let q = linear(tape, seq, p, "wq", "bq")?;
        let k = linear(tape, seq, p, "wk", "bk")?;
        let v = linear(tape, seq, p, "wv", "bv")?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
        let attn = tape.softmax(scores, 1)?;
        let mixed = tape.matmul(attn, v)?;
        let out = linear(tape, mixed, p, "wo", "bo")?;
        tape.add(seq, out)?
    };
    let f = linear(tape, h, p, "ff1.w", "ff1.b")?;
    let f = tape.gelu(f)?;
    let f = linear(tape, f, p, "ff2.w", "ff2.b")?;
    tape.add(h, f)
}

/// `Σ_t weights[t] · (1 − cos(pred_t, orig_t))` over rows of `[T, d]` tensors.
pub fn cosine_reconstruction_loss(tape: &mut Tape, pred: Var, orig: Var, weights: &[f64]) -> Result<Var> {
    let t = tape.shape(pred)[0];
    if weights.len() != t {
        return Err(Error::LengthMismatch(t, weights.len()));
    }
    let po = tape.mul(pred, orig)?;
    let dot = tape.sum_axis(po, 1)?;
    let pp = tape.mul(pred, pred)?;
    let pn = tape.sum_axis(pp, 1)?;
    let oo = tape.mul(orig, orig)?;
    let on = tape.sum_axis(oo, 1)?;
    let denom = tape.mul(pn, on)?;
    let denom = tape.add_scalar(denom, COS_EPS)?;
    let denom = tape.sqrt(denom)?;
    let cos = tape.div(dot, denom)?;
    let one_minus = tape.scale(cos, -1.0)?;
    let one_minus = tape.add_scalar(one_minus, 1.0)?;
    let w = tape.constant(Tensor::new([t], weights.to_vec())?);
    let weighted = tape.mul(one_minus, w)?;
    tape.sum(weighted)
}

/// Masked-reconstruction loss for a batch, recorded on `tape`.
/// Returns the loss and the encoded `[T, d]` originals of each segment.
pub fn masked_loss(
    tape: &mut Tape,
    batch: &[Tensor],
    p: &Bindings,
    enc: &EncoderConfig,
    cfg: &PretrainConfig,
    mask_seed: u64,
) -> Result<(Var, Vec<Var>)> {
    if batch.is_empty() {
        return Err(Error::Config("pre-training batch is empty".into()));
    }
    let mut originals = Vec::with_capacity(batch.len());
    let mut masks = Vec::with_capacity(batch.len());
    for (i, seg) in batch.iter().enumerate() {
        let x = tape.constant(seg.clone());
        let z = encode(tape, x, p, enc)?;
        let zt = tape.transpose(z)?;
        let t = tape.shape(zt)[0];
        originals.push(zt);
        masks.push(mask_spans(t, cfg.mask_rate, cfg.mask_span, mask_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    }
    let total_masked: usize = masks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum();
    if total_masked == 0 {
        return Err(Error::Config("no step is masked; pre-training needs mask_rate > 0".into()));
    }
    let mut loss: Option<Var> = None;
    for (&orig, mask) in originals.iter().zip(&masks) {
        let l = masked_sequence_loss(tape, orig, mask, total_masked, p, cfg)?;
        loss = Some(match loss {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    Ok((loss.expect("batch non-empty"), originals))
}

/// Loss contribution of one encoded `[T, d]` sequence, normalised by the
/// batch-wide masked-step count.
pub fn masked_sequence_loss(
    tape: &mut Tape,
    orig: Var,
    mask: &[bool],
    total_masked: usize,
    p: &Bindings,
    cfg: &PretrainConfig,
) -> Result<Var> {
    let (t, d) = (tape.shape(orig)[0], tape.shape(orig)[1]);
    if t > cfg.max_positions {
        return Err(Error::TooShort {
            len: cfg.max_positions,
            min: t,
        });
    }
    let keep = Tensor::from_fn([t, d], |k| if mask[k / d] { 0.0 } else { 1.0 });
    let keep = tape.constant(keep);
    let kept = tape.mul(orig, keep)?;
    let mcol = tape.constant(Tensor::from_fn([t, 1], |k| if mask[k] { 1.0 } else { 0.0 }));
    let mvec = tape.reshape(p.get(&ctx("mask_vec"))?, &[1, d])?;
    let filled = tape.matmul(mcol, mvec)?;
    let input = tape.add(kept, filled)?;
    let pos = tape.slice(p.get(&ctx("pos"))?, 0, 0, t)?;
    let input = tape.add(input, pos)?;
    let pred = contextualize(tape, input, p, cfg)?;
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 / total_masked as f64 } else { 0.0 }).collect();
    cosine_reconstruction_loss(tape, pred, orig, &weights)
}

/// One optimisation step on `batch`; returns the loss before the update.
pub fn pretrain_step(
    batch: &[Tensor],
    params: &mut ModelBundle,
    enc: &EncoderConfig,
    cfg: &PretrainConfig,
    adam: &mut AdamState,
    mask_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let (loss, _) = masked_loss(&mut tape, batch, &bindings, enc, cfg, mask_seed)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    params.accumulate_grads(&tape, &bindings);
    adam.step(params)?;
    Ok(value)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    /// Position of the shuffling stream when training stopped.
    pub rng_word_pos: u128,
}

/// Runs `cfg.epochs` passes over `data` in seeded shuffled mini-batches.
/// `max_steps` caps the total number of optimiser steps.
pub fn pretrain(
    data: &[Tensor],
    params: &mut ModelBundle,
    enc: &EncoderConfig,
    cfg: &PretrainConfig,
    max_steps: Option<usize>,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("pre-training set is empty".into()));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = PretrainReport::default();
    let mut step = 0u64;
    'outer: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if max_steps.is_some_and(|m| report.losses.len() >= m) {
                break 'outer;
            }
            let batch: Vec<Tensor> = chunk.iter().map(|&i| data[i].clone()).collect();
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(step);
            report.losses.push(pretrain_step(&batch, params, enc, cfg, &mut adam, seed)?);
            step += 1;
        }
    }
    report.rng_word_pos = rng.get_word_pos();
    Ok(report)
}
