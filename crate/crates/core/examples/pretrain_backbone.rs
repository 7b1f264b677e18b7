//! Masked-reconstruction pre-training of the convolutional encoder on
//! synthetic data, saved as a checkpoint.

use ega::harness::{pretrain_backbone, pretraining_data, ExperimentConfig};

fn main() -> ega::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.synth.n_subjects_per_class = 25;
    cfg.pretrain.epochs = 2;
    let data = pretraining_data(&cfg)?;
    println!(
        "{} segments of {:?}; encoded length T = {:?}",
        data.len(),
        data[0].shape(),
        cfg.encoder.output_len(data[0].cols())
    );
    let (ckpt, report) = pretrain_backbone(&cfg, &data, Some(50))?;
    for (i, l) in report.losses.iter().enumerate().step_by(10) {
        println!("step {i:>3}  loss {l:.4}");
    }
    println!("final loss {:.4}", report.losses.last().unwrap());
    let path = std::env::temp_dir().join("ega_pretrained.egac");
    ckpt.save(&path)?;
    println!("saved {} parameters to {}", ckpt.params.len(), path.display());
    Ok(())
}
