//! Four-chunk pooling and the softmax head on an encoded sequence.

use ega::autodiff::{Tape, Tensor};
use ega::head;

fn main() -> ega::Result<()> {
    for t in [10, 13, 160] {
        println!("T = {t:>3} -> chunks {:?}", head::chunk_sizes(t)?);
    }
    let d = 3;
    let z = Tensor::from_fn([d, 10], |i| 0.1 * (i % 10) as f64 - (i / 10) as f64);
    let params = head::init_params(d, 2, 1);
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let zv = tape.constant(z);
    let pooled = head::aggregate(&mut tape, zv)?;
    println!("pooled {:?}", tape.value(pooled).data());
    let probs = head::classify(&mut tape, pooled, &p)?;
    println!("class probabilities {:?}", tape.value(probs).data());
    let logits = head::logits(&mut tape, pooled, &p)?;
    let loss = head::ce_loss(&mut tape, logits, &[1])?;
    println!("cross-entropy against class 1: {:.4}", tape.value(loss).item());
    Ok(())
}
