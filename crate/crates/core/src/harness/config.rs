//! Experiment configuration and the checkpoint manifest configs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::AdapterConfig;
use crate::backbone::{EncoderConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::model::{AdapterSettings, Variant};
use crate::montage::GraphOptions;
use crate::signal::SynthSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Generated from `synth` with the experiment seed.
    #[default]
    Synthetic,
    /// Labelled EEGB segments from `data_dir`.
    EegbDir,
}

/// Everything one run depends on. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub variant: Variant,
    pub k_folds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub n_classes: usize,
    pub data_dir: Option<PathBuf>,
    /// Electrode coordinate override, `{"Fp1": [x, y, z], ...}`.
    pub positions: Option<PathBuf>,
    pub synth: SynthSpec,
    pub encoder: EncoderConfig,
    pub adapter: AdapterSettings,
    pub pretrain: PretrainConfig,
    pub graph: GraphOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Synthetic,
            variant: Variant::Gcn,
            k_folds: 5,
            epochs: 7,
            lr: 1e-5,
            batch_size: 4,
            seed: 0,
            n_classes: 2,
            data_dir: None,
            positions: None,
            synth: SynthSpec::default(),
            encoder: EncoderConfig::default(),
            adapter: AdapterSettings::default(),
            pretrain: PretrainConfig::default(),
            graph: GraphOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be at least 2, got {}", self.k_folds)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.n_classes != 2 {
            return Err(Error::Config("only binary tasks are supported".into()));
        }
        if self.task == Task::EegbDir && self.data_dir.is_none() {
            return Err(Error::Config("task `eegb-dir` needs `data_dir`".into()));
        }
        self.encoder.validate()?;
        self.pretrain.validate()?;
        if self.task == Task::Synthetic {
            self.synth.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    /// Synthetic stand-in for a small resting-state cohort, ten folds.
    pub fn mdd_proxy() -> Self {
        ExperimentConfig {
            k_folds: 10,
            synth: SynthSpec {
                n_subjects_per_class: 30,
                ..SynthSpec::default()
            },
            ..Self::default()
        }
    }

    /// Synthetic stand-in for a larger abnormal-versus-normal corpus with a
    /// weaker spatial signal, five folds.
    pub fn tuab_proxy() -> Self {
        ExperimentConfig {
            k_folds: 5,
            synth: SynthSpec {
                n_subjects_per_class: 40,
                coupling_sigma: 0.45,
                ..SynthSpec::default()
            },
            ..Self::default()
        }
    }

    pub fn recipe(name: &str) -> Result<Self> {
        match name {
            "mdd" | "mdd-proxy" => Ok(Self::mdd_proxy()),
            "tuab" | "tuab-proxy" => Ok(Self::tuab_proxy()),
            other => Err(Error::Config(format!("unknown recipe `{other}`; expected mdd or tuab"))),
        }
    }
}

/// The `config` block stored in a checkpoint manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckpointConfig {
    /// Encoder plus pre-training context weights.
    Pretrained {
        encoder: EncoderConfig,
        pretrain: PretrainConfig,
        segment_len: usize,
    },
    /// A fine-tuned classifier from one fold.
    Finetuned {
        variant: Variant,
        encoder: EncoderConfig,
        adapter: Option<AdapterConfig>,
        n_classes: usize,
        graph: GraphOptions,
        positions: Option<PathBuf>,
        fold: usize,
    },
}
