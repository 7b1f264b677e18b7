//! Pre-training, k-fold fine-tuning, metrics and reporting.

pub mod config;
pub mod finetune;
pub mod gradsuite;
pub mod kfold;
pub mod metrics;
pub mod report;

use std::time::Instant;

pub use config::{CheckpointConfig, ExperimentConfig, Task};
pub use finetune::{finetune, run_fold, FoldReport, FoldRun, Pretrained};
pub use kfold::{kfold_split, Fold};
pub use metrics::{auroc, f1_score};
pub use report::{build_report, strip_wall_clock, ExperimentReport};

use crate::autodiff::Tensor;
use crate::backbone::{self, init_context_params, init_encoder_params, PretrainReport};
use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::model::mix_seed;
use crate::montage::{builtin_positions, load_positions, MontageGraph};
use crate::signal::{io, synthesize_dataset, Segment};

/// The sensor graph for `cfg`, honouring a position override file.
pub fn graph_for(cfg: &ExperimentConfig, n_channels: usize) -> Result<MontageGraph> {
    if n_channels != crate::montage::CANONICAL_CHANNELS.len() {
        if cfg.positions.is_some() {
            return Err(Error::Config("electrode positions only apply to the 19-channel montage".into()));
        }
        return Ok(MontageGraph::uniform(n_channels, !cfg.graph.no_self_loop));
    }
    let positions = match &cfg.positions {
        Some(p) => load_positions(p)?,
        None => builtin_positions(),
    };
    MontageGraph::build(&positions, cfg.graph)
}

/// Fine-tuning segments for `cfg`: generated for the synthetic task,
/// otherwise read from `data_dir`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Vec<Segment>> {
    match cfg.task {
        Task::Synthetic => synthesize_dataset(&cfg.synth, cfg.seed),
        Task::EegbDir => {
            let dir = cfg.data_dir.as_ref().ok_or_else(|| Error::Config("no data_dir".into()))?;
            let data = io::load_segments(dir)?;
            if data.is_empty() {
                return Err(Error::Config(format!("no .eegb files in {}", dir.display())));
            }
            Ok(data)
        }
    }
}

/// Pre-training inputs. The synthetic task draws an unlabelled set from its
/// own seed, so the checkpoint is shared across fine-tuning seeds.
pub fn pretraining_data(cfg: &ExperimentConfig) -> Result<Vec<Tensor>> {
    let segments = match cfg.task {
        Task::Synthetic => {
            synthesize_dataset(&cfg.synth, mix_seed(cfg.pretrain.seed, 0x70726574))?
        }
        Task::EegbDir => load_dataset(cfg)?,
    };
    Ok(segments.into_iter().map(|s| s.samples).collect())
}

/// Initialises and pre-trains an encoder, returning it as a checkpoint.
pub fn pretrain_backbone(cfg: &ExperimentConfig, data: &[Tensor], max_steps: Option<usize>) -> Result<(Checkpoint, PretrainReport)> {
    cfg.validate()?;
    let len = data.first().ok_or_else(|| Error::Config("pre-training set is empty".into()))?.cols();
    if let Some(t) = data.iter().find(|t| t.cols() != len) {
        return Err(Error::Config(format!("pre-training segments mix lengths {len} and {}", t.cols())));
    }
    let seed = cfg.pretrain.seed;
    let mut params = init_encoder_params(&cfg.encoder, mix_seed(seed, 0x656e63))?;
    params.merge(init_context_params(cfg.encoder.d_enc, &cfg.pretrain, mix_seed(seed, 0x637478))?);
    let report = backbone::pretrain(data, &mut params, &cfg.encoder, &cfg.pretrain, max_steps)?;
    params.zero_grads();
    let manifest = CheckpointConfig::Pretrained {
        encoder: cfg.encoder.clone(),
        pretrain: cfg.pretrain.clone(),
        segment_len: len,
    };
    let rng = RngState {
        seed,
        word_pos: report.rng_word_pos,
    };
    Ok((Checkpoint::new(&manifest, params, rng)?, report))
}

/// A freshly initialised, untrained encoder checkpoint.
pub fn untrained_backbone(cfg: &ExperimentConfig, segment_len: usize) -> Result<Checkpoint> {
    let seed = cfg.pretrain.seed;
    let mut params = init_encoder_params(&cfg.encoder, mix_seed(seed, 0x656e63))?;
    params.merge(init_context_params(cfg.encoder.d_enc, &cfg.pretrain, mix_seed(seed, 0x637478))?);
    let manifest = CheckpointConfig::Pretrained {
        encoder: cfg.encoder.clone(),
        pretrain: cfg.pretrain.clone(),
        segment_len,
    };
    Checkpoint::new(&manifest, params, RngState { seed, word_pos: 0 })
}

/// Fine-tunes every fold and builds the report.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    pre: &Pretrained,
    data: &[Segment],
    on_fold: impl FnMut(&FoldRun) -> Result<()>,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let n_channels = data.first().map_or(0, Segment::n_channels);
    let graph = graph_for(cfg, n_channels)?;
    let folds = finetune(cfg, pre, &graph, data, on_fold)?;
    let settings = finetune::resolved_settings(cfg, pre);
    build_report(cfg, folds, &settings, data[0].len(), start.elapsed().as_secs_f64())
}
