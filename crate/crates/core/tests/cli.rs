//! The `ega` binary end to end.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use ega::harness::strip_wall_clock;
use ega::model::Variant;

fn ega(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ega")).args(args).output().expect("runs")
}

fn ok(args: &[&str]) -> String {
    let out = ega(args);
    assert!(out.status.success(), "ega {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Encoder, head, adapter and context sizes written out by hand.
fn closed_form(len: usize, d: usize, h: usize, classes: usize) -> [(&'static str, usize); 6] {
    let kernels = [3, 2, 2, 2, 2, 2];
    let encoder: usize = kernels
        .iter()
        .enumerate()
        .map(|(b, &k)| d * if b == 0 { 19 } else { d } * k + 3 * d)
        .sum();
    let head = 4 * d * classes + classes;
    let out_proj = h * len + len;
    let gcn = (len * h + h) + (h * h + h);
    let sage = (2 * len * h + h) + (2 * h * h + h);
    let gat = gcn + 2 * (2 * h);
    let ff = 4 * d;
    let context = d + 256 * d + 4 * (d * d + d) + (d * ff + ff) + (ff * d + d);
    [
        ("baseline-bendr", encoder + head),
        ("frozen", head),
        ("ega-gcn", head + out_proj + gcn),
        ("ega-sage", head + out_proj + sage),
        ("ega-gat", head + out_proj + gat),
        ("full-backbone", encoder + context),
    ]
}

#[test]
fn params_match_closed_form() {
    for (len, d, h) in [(1024, 64, 64), (512, 32, 16), (15360, 512, 64)] {
        let json = ok(&["params", "--json", "--len", &len.to_string(), "--d-enc", &d.to_string(), "--hidden", &h.to_string()]);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for (name, want) in closed_form(len, d, h, 2) {
            assert_eq!(v[name].as_u64(), Some(want as u64), "{name} at L={len} d={d} h={h}");
        }
    }
    let table = ok(&["params"]);
    assert!(table.contains("ega-sage") && table.contains("206466"), "{table}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"k_folds": 3, "learning_rate": 0.1}"#).unwrap();
    let out = ega(&["params", "--config", s(&path)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    std::fs::write(&path, r#"{"adapter": {"hiden": 4}}"#).unwrap();
    assert!(!ega(&["params", "--config", s(&path)]).status.success());
}

#[test]
fn synth_pretrain_finetune_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg_path = root.join("cfg.json");
    let mut cfg = common::tiny_config(Variant::Gcn);
    cfg.pretrain.epochs = 1;
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let data = root.join("data");
    ok(&["synth", "--out", s(&data), "--seed", "9", "--subjects", "6", "--len", "512"]);
    assert_eq!(std::fs::read_dir(&data).unwrap().count(), 12);

    let ckpt = root.join("pre.egac");
    ok(&["pretrain", "--config", s(&cfg_path), "--out", s(&ckpt), "--max-steps", "2"]);

    let (a, b) = (root.join("a"), root.join("b"));
    for out in [&a, &b] {
        let table = ok(&["finetune", "--config", s(&cfg_path), "--ckpt", s(&ckpt), "--seed", "0", "--out", s(out), "--save-models"]);
        assert!(table.contains("ega-gcn"), "{table}");
    }
    let read = |d: &Path| strip_wall_clock(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(read(&a), read(&b));

    let scored = ok(&["eval", "--ckpt", s(&a.join("fold0.egac")), "--data", s(&data)]);
    assert!(scored.to_lowercase().contains("auroc"), "{scored}");
}

#[test]
fn gradcheck_command_passes() {
    let out = ok(&["gradcheck", "--seeds", "1"]);
    assert!(out.contains("0 failed"), "{out}");
}
