//! Fold aggregation, `report.json` and the text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::finetune::FoldReport;
use super::metrics::{auroc, f1_score};
use crate::error::{Error, Result};
use crate::model::{trainable_count, AdapterSettings, Variant};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    /// Fold mean ± std of last-epoch F1.
    pub f1: MeanStd,
    /// Fold mean ± std of last-epoch AUROC over folds where it is defined.
    pub auroc: Option<MeanStd>,
    /// Folds left out of the AUROC mean (single-class eval set).
    pub auroc_excluded_folds: Vec<usize>,
    /// Metrics over all folds' eval predictions pooled together.
    pub pooled_f1: f64,
    pub pooled_auroc: Option<f64>,
    /// Fold mean F1 before any training step.
    pub epoch0_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamCounts {
    pub trainable: usize,
    /// Closed-form trainable counts of every variant under this config.
    pub per_variant: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub variant: Variant,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub params: ParamCounts,
    pub folds: Vec<FoldReport>,
    pub summary: Summary,
    pub wall_clock_s: f64,
}

fn pooled(folds: &[FoldReport]) -> Result<(f64, Option<f64>)> {
    let scores: Vec<f64> = folds.iter().flat_map(|f| f.eval_scores.iter().copied()).collect();
    let labels: Vec<usize> = folds.iter().flat_map(|f| f.eval_labels.iter().copied()).collect();
    let preds: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.5)).collect();
    Ok((f1_score(&preds, &labels)?, auroc(&scores, &labels).ok()))
}

/// Aggregates fold reports. `adapter` and `segment_len` feed the
/// closed-form counts.
pub fn build_report(
    cfg: &ExperimentConfig,
    folds: Vec<FoldReport>,
    adapter: &AdapterSettings,
    segment_len: usize,
    wall_clock_s: f64,
) -> Result<ExperimentReport> {
    if folds.is_empty() {
        return Err(Error::Config("a report needs at least one fold".into()));
    }
    let f1s: Vec<f64> = folds.iter().map(|f| f.f1).collect();
    let aurocs: Vec<f64> = folds.iter().filter_map(|f| f.auroc).collect();
    let excluded = folds.iter().filter(|f| f.auroc.is_none()).map(|f| f.fold).collect();
    let epoch0: Vec<f64> = folds.iter().map(|f| f.epochs[0].f1).collect();
    let (pooled_f1, pooled_auroc) = pooled(&folds)?;
    let per_variant = Variant::ALL
        .iter()
        .map(|&v| (v.name().to_string(), trainable_count(v, &cfg.encoder, adapter, segment_len, cfg.n_classes)))
        .collect();
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        variant: cfg.variant,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        params: ParamCounts {
            trainable: folds[0].trainable_params,
            per_variant,
        },
        summary: Summary {
            f1: MeanStd::of(&f1s).expect("non-empty"),
            auroc: MeanStd::of(&aurocs),
            auroc_excluded_folds: excluded,
            pooled_f1,
            pooled_auroc,
            epoch0_f1: MeanStd::of(&epoch0).expect("non-empty").mean,
        },
        folds,
        wall_clock_s,
    })
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and checks a report: schema version, metric ranges, and
    /// agreement between the folds and the summary.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: ExperimentReport = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::format("report", reason));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema version {}", self.schema_version));
        }
        if self.folds.is_empty() {
            return bad("no folds".into());
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        for f in &self.folds {
            if !in_unit(f.f1) || f.auroc.is_some_and(|a| !in_unit(a)) {
                return bad(format!("fold {} metric outside [0, 1]", f.fold));
            }
            if f.epochs.iter().any(|e| !in_unit(e.f1) || e.auroc.is_some_and(|a| !in_unit(a))) {
                return bad(format!("fold {} epoch metric outside [0, 1]", f.fold));
            }
            if f.eval_scores.len() != f.eval_labels.len() || f.eval_indices.len() != f.n_eval {
                return bad(format!("fold {} eval arrays disagree", f.fold));
            }
            if f.freeze_audit.checked && f.freeze_audit.digest_before != f.freeze_audit.digest_after {
                return bad(format!("fold {} froze badly", f.fold));
            }
        }
        let f1s: Vec<f64> = self.folds.iter().map(|f| f.f1).collect();
        let again = MeanStd::of(&f1s).expect("non-empty");
        if again != self.summary.f1 {
            return bad("summary F1 disagrees with folds".into());
        }
        Ok(())
    }

    /// Aligned text table for stdout.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        writeln!(s, "variant {}  config {}", self.variant, &self.config_hash[..12]).ok();
        writeln!(s, "{:>6}  {:>7}  {:>7}  {:>7}  {:>10}  {:>8}", "fold", "F1@0", "F1", "AUROC", "trainable", "seconds").ok();
        for f in &self.folds {
            writeln!(
                s,
                "{:>6}  {:>7.4}  {:>7.4}  {:>7}  {:>10}  {:>8.2}",
                f.fold,
                f.epochs[0].f1,
                f.f1,
                opt(f.auroc),
                f.trainable_params,
                f.wall_clock_s
            )
            .ok();
        }
        let sm = &self.summary;
        let au = sm.auroc.as_ref().map_or("n/a".to_string(), |a| format!("{:.4} ± {:.4}", a.mean, a.std));
        writeln!(s, "{:>6}  F1 {:.4} ± {:.4}  AUROC {au}", "mean", sm.f1.mean, sm.f1.std).ok();
        writeln!(s, "{:>6}  F1 {:.4}  AUROC {}", "pooled", sm.pooled_f1, opt(sm.pooled_auroc)).ok();
        if !sm.auroc_excluded_folds.is_empty() {
            writeln!(s, "AUROC undefined (single-class eval set) in folds {:?}", sm.auroc_excluded_folds).ok();
        }
        s
    }
}

/// The report JSON with every `wall_clock_s` field removed.
pub fn strip_wall_clock(json: &str) -> Result<serde_json::Value> {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(m) => {
                m.remove("wall_clock_s");
                m.values_mut().for_each(strip);
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v: serde_json::Value = serde_json::from_str(json)?;
    strip(&mut v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::finetune::{EpochMetrics, FreezeAudit};

    fn fold(i: usize, f1: f64) -> FoldReport {
        FoldReport {
            fold: i,
            n_train: 2,
            n_eval: 2,
            train_loss: vec![0.7],
            epochs: vec![
                EpochMetrics { epoch: 0, f1: 0.5, auroc: Some(0.5) },
                EpochMetrics { epoch: 1, f1, auroc: Some(1.0) },
            ],
            f1,
            auroc: Some(1.0),
            auroc_error: None,
            trainable_params: 10,
            freeze_audit: FreezeAudit {
                checked: true,
                digest_before: "a".into(),
                digest_after: "a".into(),
            },
            eval_indices: vec![0, 1],
            eval_labels: vec![0, 1],
            eval_scores: vec![0.2, 0.9],
            wall_clock_s: 0.1,
        }
    }

    #[test]
    fn mean_std() {
        let one = MeanStd::of(&[0.8]).unwrap();
        assert_eq!((one.mean, one.std), (0.8, 0.0));
        assert!((MeanStd::of(&[0.8, 0.6]).unwrap().mean - 0.7).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_validates() {
        let cfg = ExperimentConfig::default();
        let r = build_report(&cfg, vec![fold(0, 0.8), fold(1, 0.6)], &cfg.adapter, 1024, 1.0).unwrap();
        let json = r.to_json().unwrap();
        assert_eq!(ExperimentReport::from_json(&json).unwrap(), r);
        assert!(r.table().contains("pooled"));
        let stripped = strip_wall_clock(&json).unwrap();
        assert!(!stripped.to_string().contains("wall_clock_s"));
        let mut broken = r.clone();
        broken.folds[0].f1 = 1.5;
        assert!(ExperimentReport::from_json(&broken.to_json().unwrap()).is_err());
    }
}
