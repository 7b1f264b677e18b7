//! Per-fold fine-tuning from a pretrained encoder.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{CheckpointConfig, ExperimentConfig};
use super::kfold::{kfold_split, Fold};
use super::metrics::{argmax, auroc, f1_score};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use crate::backbone::{self, EncoderConfig};
use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::model::{mix_seed, AdapterSettings, InitSeeds, Model};
use crate::montage::MontageGraph;
use crate::signal::Segment;

/// Encoder weights and config read from a pre-training checkpoint.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub encoder: EncoderConfig,
    pub segment_len: usize,
    pub checkpoint: Checkpoint,
}

impl Pretrained {
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        match checkpoint.config_as::<CheckpointConfig>()? {
            CheckpointConfig::Pretrained { encoder, segment_len, .. } => Ok(Pretrained {
                encoder,
                segment_len,
                checkpoint,
            }),
            CheckpointConfig::Finetuned { .. } => Err(Error::IncompatibleCheckpoint(vec![
                "expected a pre-training checkpoint, found a fine-tuned model".into(),
            ])),
        }
    }

    /// Lists every way `data` disagrees with the encoder.
    pub fn check_compatible(&self, data: &[Segment], cfg: &ExperimentConfig) -> Result<()> {
        let mut problems = Vec::new();
        let enc = &self.encoder;
        for field in encoder_diff(enc, &cfg.encoder) {
            problems.push(format!("encoder.{field}: checkpoint {} vs config {}", field_value(enc, field), field_value(&cfg.encoder, field)));
        }
        if let Some(s) = data.iter().find(|s| s.n_channels() != enc.in_channels) {
            problems.push(format!("channels: checkpoint {} vs data {}", enc.in_channels, s.n_channels()));
        }
        if let Some(s) = data.iter().find(|s| s.len() != data[0].len()) {
            problems.push(format!("segment length: data mixes {} and {}", data[0].len(), s.len()));
        }
        let min = enc.min_input_len();
        if let Some(s) = data.iter().find(|s| s.len() < min) {
            problems.push(format!("segment length: {} below encoder minimum {min}", s.len()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::IncompatibleCheckpoint(problems))
        }
    }
}

fn encoder_diff(a: &EncoderConfig, b: &EncoderConfig) -> Vec<&'static str> {
    let mut out = Vec::new();
    if a.in_channels != b.in_channels {
        out.push("in_channels");
    }
    if a.d_enc != b.d_enc {
        out.push("d_enc");
    }
    if a.kernels != b.kernels {
        out.push("kernels");
    }
    if a.strides != b.strides {
        out.push("strides");
    }
    if a.norm_groups != b.norm_groups {
        out.push("norm_groups");
    }
    out
}

fn field_value(e: &EncoderConfig, field: &str) -> String {
    match field {
        "in_channels" => e.in_channels.to_string(),
        "d_enc" => e.d_enc.to_string(),
        "kernels" => format!("{:?}", e.kernels),
        "strides" => format!("{:?}", e.strides),
        _ => e.norm_groups.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub f1: f64,
    pub auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeAudit {
    pub checked: bool,
    pub digest_before: String,
    pub digest_after: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_eval: usize,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
    /// Last-epoch metrics.
    pub f1: f64,
    pub auroc: Option<f64>,
    /// Why AUROC is missing, when it is.
    pub auroc_error: Option<String>,
    pub trainable_params: usize,
    pub freeze_audit: FreezeAudit,
    pub eval_indices: Vec<usize>,
    pub eval_labels: Vec<usize>,
    /// Last-epoch positive-class probabilities.
    pub eval_scores: Vec<f64>,
    pub wall_clock_s: f64,
}

/// Outcome of one fold: the report plus the trained model.
pub struct FoldRun {
    pub report: FoldReport,
    pub model: Model,
}

fn evaluate(model: &Model, data: &[Segment], idx: &[usize]) -> Result<(f64, std::result::Result<f64, Error>, Vec<f64>)> {
    let batch: Vec<&Tensor> = idx.iter().map(|&i| &data[i].samples).collect();
    let probs = model.predict_proba(&batch)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| data[i].label).collect();
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let f1 = f1_score(&preds, &labels)?;
    Ok((f1, auroc(&scores, &labels), scores))
}

/// Adapter settings with the backbone length pinned to the pre-training
/// length, so segments of any other length pass through the length map.
pub fn resolved_settings(cfg: &ExperimentConfig, pre: &Pretrained) -> AdapterSettings {
    let mut settings = cfg.adapter.clone();
    settings.backbone_len.get_or_insert(pre.segment_len);
    settings
}

/// Builds the fold's model. The head and adapter seeds depend only on the
/// experiment seed and fold, so every variant starts from the same head.
pub fn build_model(cfg: &ExperimentConfig, pre: &Pretrained, graph: &MontageGraph, segment_len: usize, fold: usize) -> Result<Model> {
    let settings = resolved_settings(cfg, pre);
    let seeds = InitSeeds::derive(cfg.seed ^ fold as u64);
    Model::from_pretrained(
        cfg.variant,
        &pre.checkpoint.params,
        &pre.encoder,
        &settings,
        graph,
        segment_len,
        cfg.n_classes,
        seeds,
    )
}

/// Trains and evaluates one fold. Every epoch, including epoch 0, is
/// evaluated; the fold's headline metrics are the last epoch's.
pub fn run_fold(cfg: &ExperimentConfig, pre: &Pretrained, graph: &MontageGraph, data: &[Segment], split: &Fold, fold: usize) -> Result<FoldRun> {
    let start = Instant::now();
    let mut model = build_model(cfg, pre, graph, data[0].len(), fold)?;
    let digest_before = model.params.digest(backbone::PREFIX);

    let stream = cfg.seed ^ fold as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let eval_labels: Vec<usize> = split.eval.iter().map(|&i| data[i].label).collect();

    let mut epochs = Vec::with_capacity(cfg.epochs + 1);
    let (f1, au, mut scores) = evaluate(&model, data, &split.eval)?;
    let mut last_auroc = au;
    epochs.push(EpochMetrics {
        epoch: 0,
        f1,
        auroc: last_auroc.as_ref().ok().copied(),
    });

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut order = split.train.clone();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &data[i].samples).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data[i].label).collect();
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape);
            let logits = model.logits(&mut tape, &p, &batch, mix_seed(stream, step))?;
            let loss = tape.cross_entropy(logits, &labels)?;
            total += tape.value(loss).item() * chunk.len() as f64;
            tape.backward(loss)?;
            model.params.accumulate_grads(&tape, &p);
            adam.step(&mut model.params)?;
            step += 1;
        }
        train_loss.push(total / order.len() as f64);
        let (f1, au, s) = evaluate(&model, data, &split.eval)?;
        scores = s;
        last_auroc = au;
        epochs.push(EpochMetrics {
            epoch,
            f1,
            auroc: last_auroc.as_ref().ok().copied(),
        });
    }

    let digest_after = model.params.digest(backbone::PREFIX);
    let checked = cfg.variant.freezes_backbone();
    if checked && digest_before != digest_after {
        return Err(Error::FreezeViolation {
            fold,
            before: digest_before,
            after: digest_after,
        });
    }
    let last = epochs.last().expect("epoch 0 recorded").clone();
    Ok(FoldRun {
        report: FoldReport {
            fold,
            n_train: split.train.len(),
            n_eval: split.eval.len(),
            train_loss,
            f1: last.f1,
            auroc: last.auroc,
            auroc_error: last_auroc.err().map(|e| e.to_string()),
            epochs,
            trainable_params: model.trainable_count(),
            freeze_audit: FreezeAudit {
                checked,
                digest_before,
                digest_after,
            },
            eval_indices: split.eval.clone(),
            eval_labels,
            eval_scores: scores,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        model,
    })
}

/// Runs every fold in order. `on_fold` sees each finished fold, e.g. to
/// save its model.
pub fn finetune(
    cfg: &ExperimentConfig,
    pre: &Pretrained,
    graph: &MontageGraph,
    data: &[Segment],
    mut on_fold: impl FnMut(&FoldRun) -> Result<()>,
) -> Result<Vec<FoldReport>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no segments to fine-tune on".into()));
    }
    pre.check_compatible(data, cfg)?;
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    if labels.iter().any(|&l| l >= cfg.n_classes) {
        return Err(Error::Config(format!("labels must lie in 0..{}", cfg.n_classes)));
    }
    let folds = kfold_split(&labels, cfg.k_folds, cfg.seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (i, split) in folds.iter().enumerate() {
        let run = run_fold(cfg, pre, graph, data, split, i)?;
        on_fold(&run)?;
        reports.push(run.report);
    }
    Ok(reports)
}

/// Packs a fine-tuned fold model into a checkpoint.
pub fn model_checkpoint(cfg: &ExperimentConfig, run: &FoldRun) -> Result<Checkpoint> {
    let manifest = CheckpointConfig::Finetuned {
        variant: run.model.variant,
        encoder: run.model.encoder.clone(),
        adapter: run.model.adapter.clone(),
        n_classes: run.model.n_classes,
        graph: cfg.graph,
        positions: cfg.positions.clone(),
        fold: run.report.fold,
    };
    let mut params = run.model.params.clone();
    params.zero_grads();
    Checkpoint::new(
        &manifest,
        params,
        RngState {
            seed: cfg.seed ^ run.report.fold as u64,
            word_pos: 0,
        },
    )
}

/// Restores a fine-tuned model; the graph must be rebuilt by the caller
/// from the stored options.
pub fn model_from_checkpoint(ckpt: &Checkpoint, graph: &MontageGraph) -> Result<Model> {
    match ckpt.config_as::<CheckpointConfig>()? {
        CheckpointConfig::Finetuned {
            variant,
            encoder,
            adapter,
            n_classes,
            ..
        } => Model::from_parts(variant, encoder, adapter, n_classes, ckpt.params.clone(), graph),
        CheckpointConfig::Pretrained { .. } => Err(Error::IncompatibleCheckpoint(vec![
            "expected a fine-tuned model, found a pre-training checkpoint".into(),
        ])),
    }
}
