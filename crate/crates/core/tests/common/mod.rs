#![allow(dead_code)]

use ega::harness::ExperimentConfig;
use ega::model::Variant;

/// Small enough to fine-tune in a second or two.
pub fn tiny_config(variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.variant = variant;
    cfg.k_folds = 3;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    cfg.synth.n_subjects_per_class = 6;
    cfg.synth.segment_len = 512;
    cfg.adapter.hidden = 8;
    cfg.encoder.d_enc = 16;
    cfg
}
