//! Save, load and save again; the two files are byte-identical.

use ega::checkpoint::{Checkpoint, RngState};
use ega::harness::{untrained_backbone, ExperimentConfig};

fn main() -> ega::Result<()> {
    let ckpt = untrained_backbone(&ExperimentConfig::default(), 1024)?;
    let dir = std::env::temp_dir();
    let (a, b) = (dir.join("ega_a.egac"), dir.join("ega_b.egac"));
    ckpt.save(&a)?;
    Checkpoint::load(&a)?.save(&b)?;
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    println!("{} bytes, identical: {}", x.len(), x == y);
    let manifest_len = u32::from_le_bytes(x[4..8].try_into().unwrap()) as usize;
    println!("manifest: {}", String::from_utf8_lossy(&x[8..8 + manifest_len.min(160)]));
    let RngState { seed, word_pos } = ckpt.rng_state;
    println!("rng seed {seed}, word position {word_pos}");
    Ok(())
}
