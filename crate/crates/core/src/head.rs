//! Four-chunk temporal pooling followed by a softmax classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bindings, ModelBundle};

pub const PREFIX: &str = "head.";
pub const N_CHUNKS: usize = 4;

/// Sizes of the four contiguous chunks of `t` steps; the first `t % 4`
/// chunks take one extra step.
pub fn chunk_sizes(t: usize) -> Result<[usize; N_CHUNKS]> {
    if t < N_CHUNKS {
        return Err(Error::TooShort { len: t, min: N_CHUNKS });
    }
    let (base, rem) = (t / N_CHUNKS, t % N_CHUNKS);
    Ok(std::array::from_fn(|i| base + usize::from(i < rem)))
}

/// Splits a `[d, T]` embedding sequence into four chunks along time,
/// mean-pools each, and concatenates into a `[1, 4·d]` row.
pub fn aggregate(tape: &mut Tape, z: Var) -> Result<Var> {
    let (d, t) = (tape.shape(z)[0], tape.shape(z)[1]);
    let sizes = chunk_sizes(t)?;
    let mut pooled = Vec::with_capacity(N_CHUNKS);
    let mut start = 0;
    for s in sizes {
        let chunk = tape.slice(z, 1, start, start + s)?;
        pooled.push(tape.mean_axis(chunk, 1)?);
        start += s;
    }
    let cat = tape.concat(&pooled, 0)?;
    tape.reshape(cat, &[1, N_CHUNKS * d])
}

pub fn param_count(d_enc: usize, n_classes: usize) -> usize {
    N_CHUNKS * d_enc * n_classes + n_classes
}

pub fn init_params(d_enc: usize, n_classes: usize, seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = N_CHUNKS * d_enc;
    let mut b = ModelBundle::new();
    b.insert(
        format!("{PREFIX}w"),
        init::glorot(&mut rng, [fan_in, n_classes], fan_in, n_classes),
        true,
    );
    b.insert(format!("{PREFIX}b"), Tensor::zeros([n_classes]), true);
    b
}

/// Class logits `X_out · W + b` for `[B, 4·d]` pooled rows.
pub fn logits(tape: &mut Tape, pooled: Var, p: &Bindings) -> Result<Var> {
    let y = tape.matmul(pooled, p.get(&format!("{PREFIX}w"))?)?;
    tape.add_row(y, p.get(&format!("{PREFIX}b"))?)
}

/// Class probabilities `softmax(X_out · W + b)`.
pub fn classify(tape: &mut Tape, pooled: Var, p: &Bindings) -> Result<Var> {
    let z = logits(tape, pooled, p)?;
    tape.softmax(z, 1)
}

/// Mean cross-entropy of `[B, C]` logits against integer labels.
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_rule() {
        assert_eq!(chunk_sizes(160).unwrap(), [40; 4]);
        assert_eq!(chunk_sizes(7).unwrap(), [2, 2, 2, 1]);
        assert!(chunk_sizes(3).is_err());
    }

    #[test]
    fn constant_sequence_pools_to_repeats() {
        let c = [0.5, -1.0, 2.0];
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_fn([3, 9], |k| c[k / 9]));
        let out = aggregate(&mut tape, z).unwrap();
        let expect: Vec<f64> = (0..4).flat_map(|_| c).collect();
        assert_eq!(tape.value(out).data(), expect.as_slice());
    }

    fn bind_head(w: Tensor, b: Tensor) -> (Tape, Bindings) {
        let mut p = ModelBundle::new();
        p.insert("head.w", w, true);
        p.insert("head.b", b, true);
        let mut tape = Tape::new();
        let bindings = p.bind(&mut tape);
        (tape, bindings)
    }

    #[test]
    fn classify_edge_cases() {
        let (mut tape, p) = bind_head(Tensor::zeros([8, 2]), Tensor::zeros([2]));
        let x = tape.constant(Tensor::full([1, 8], 3.0));
        let probs = classify(&mut tape, x, &p).unwrap();
        assert_eq!(tape.value(probs).data(), &[0.5, 0.5]);

        let (mut tape, p) = bind_head(Tensor::zeros([8, 2]), Tensor::new([2], vec![10.0, -10.0]).unwrap());
        let x = tape.constant(Tensor::full([1, 8], 3.0));
        let probs = classify(&mut tape, x, &p).unwrap();
        assert!((tape.value(probs).data()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn uniform_ce_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros([1, 2]));
        for label in [0, 1] {
            let l = ce_loss(&mut tape, z, &[label]).unwrap();
            assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let z = tape.constant(Tensor::new([1, 2], vec![800.0, 0.0]).unwrap());
        let l = ce_loss(&mut tape, z, &[0]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }
}
