//! Checkpoint round trips and compatibility errors.

mod common;

use ega::checkpoint::Checkpoint;
use ega::harness::finetune::{model_checkpoint, model_from_checkpoint, run_fold};
use ega::harness::{graph_for, kfold_split, load_dataset, untrained_backbone, Pretrained};
use ega::model::Variant;
use ega::Error;

#[test]
fn pretrained_save_load_save_is_bitwise_identical() {
    let cfg = common::tiny_config(Variant::Gcn);
    let ckpt = untrained_backbone(&cfg, 512).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.egac"), dir.path().join("b.egac"));
    ckpt.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.params, ckpt.params);
}

#[test]
fn finetuned_model_round_trips_with_identical_predictions() {
    for variant in [Variant::Gcn, Variant::Gat, Variant::Frozen] {
        let cfg = common::tiny_config(variant);
        let pre = Pretrained::from_checkpoint(untrained_backbone(&cfg, 512).unwrap()).unwrap();
        let data = load_dataset(&cfg).unwrap();
        let graph = graph_for(&cfg, 19).unwrap();
        let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
        let split = &kfold_split(&labels, cfg.k_folds, cfg.seed).unwrap()[0];
        let run = run_fold(&cfg, &pre, &graph, &data, split, 0).unwrap();

        let bytes = model_checkpoint(&cfg, &run).unwrap().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let model = model_from_checkpoint(&back, &graph).unwrap();
        let batch: Vec<_> = data.iter().map(|s| &s.samples).collect();
        assert_eq!(model.predict_proba(&batch).unwrap(), run.model.predict_proba(&batch).unwrap());
    }
}

#[test]
fn incompatible_data_lists_every_problem() {
    let cfg = common::tiny_config(Variant::Gcn);
    let pre = Pretrained::from_checkpoint(untrained_backbone(&cfg, 512).unwrap()).unwrap();
    let mut other = cfg.clone();
    other.encoder.d_enc = 32;
    other.synth.n_channels = 8;
    other.synth.segment_len = 32;
    let data = load_dataset(&other).unwrap();
    match pre.check_compatible(&data, &other) {
        Err(Error::IncompatibleCheckpoint(problems)) => {
            assert!(problems.iter().any(|p| p.starts_with("encoder.d_enc")), "{problems:?}");
            assert!(problems.iter().any(|p| p.starts_with("channels")), "{problems:?}");
            assert!(problems.iter().any(|p| p.contains("below encoder minimum")), "{problems:?}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn finetuned_checkpoint_is_not_a_backbone() {
    let cfg = common::tiny_config(Variant::Gcn);
    let pre = Pretrained::from_checkpoint(untrained_backbone(&cfg, 512).unwrap()).unwrap();
    let data = load_dataset(&cfg).unwrap();
    let graph = graph_for(&cfg, 19).unwrap();
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    let split = &kfold_split(&labels, 3, 0).unwrap()[0];
    let run = run_fold(&cfg, &pre, &graph, &data, split, 0).unwrap();
    let ft = model_checkpoint(&cfg, &run).unwrap();
    assert!(matches!(Pretrained::from_checkpoint(ft), Err(Error::IncompatibleCheckpoint(_))));
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = untrained_backbone(&common::tiny_config(Variant::Gcn), 512).unwrap().to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut magic = bytes;
    magic[0] ^= 1;
    assert!(Checkpoint::from_bytes(&magic).is_err());
}
