//! Record a small computation, backpropagate, check it against finite
//! differences and take a few Adam steps.

use ega::autodiff::{grad_check, AdamConfig, AdamState, Tape, Tensor};
use ega::params::ModelBundle;

fn main() -> ega::Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])?, true);
    let w = tape.leaf(Tensor::from_rows(&[vec![0.5], vec![-1.0]])?, true);
    let y = tape.matmul(x, w)?;
    let y = tape.gelu(y)?;
    let loss = tape.sum(y)?;
    tape.backward(loss)?;
    println!("loss   {:.6}", tape.value(loss).item());
    println!("dL/dw  {:?}", tape.grad(w).unwrap().data());

    // gradient of a softmax-weighted sum, checked numerically
    let probe = Tensor::from_fn([3, 4], |i| (i as f64 * 0.7).sin());
    let report = grad_check(
        |t, v| {
            let s = t.softmax(v, 1)?;
            let p = t.mul(s, v)?;
            t.sum(p)
        },
        &probe,
        1e-6,
    )?;
    println!("softmax grad check: max rel error {:.2e}", report.max_rel_error);

    // minimise (p − 3)² with Adam
    let mut params = ModelBundle::new();
    params.insert("p", Tensor::scalar(0.0), true);
    let mut adam = AdamState::new(AdamConfig::with_lr(0.1));
    for step in 0..200 {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let p = b.get("p")?;
        let d = tape.add_scalar(p, -3.0)?;
        let sq = tape.mul(d, d)?;
        tape.backward(sq)?;
        params.accumulate_grads(&tape, &b);
        adam.step(&mut params)?;
        if step % 50 == 0 {
            println!("step {step:>3}  p = {:.4}", params.get("p")?.value.item());
        }
    }
    println!("final p = {:.4}", params.get("p")?.value.item());
    Ok(())
}
