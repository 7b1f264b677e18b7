use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Masks contiguous spans of `span` steps out of `t`. Span starts are drawn
/// uniformly without replacement from the positions where a whole span fits,
/// until at least a fraction `p` is masked or no start remains. Spans may
/// overlap.
pub fn mask_spans(t: usize, p: f64, span: usize, seed: u64) -> Vec<bool> {
    let mut mask = vec![false; t];
    if t == 0 || p <= 0.0 {
        return mask;
    }
    let span = span.clamp(1, t);
    let mut starts: Vec<usize> = (0..=t - span).collect();
    starts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = p * t as f64;
    let mut masked = 0usize;
    for s in starts {
        if masked as f64 >= target {
            break;
        }
        for m in &mut mask[s..s + span] {
            if !*m {
                *m = true;
                masked += 1;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_mask() {
        assert!(mask_spans(50, 0.0, 5, 1).iter().all(|&m| !m));
    }

    #[test]
    fn full_span_covers_all() {
        assert!(mask_spans(37, 0.5, 37, 4).iter().all(|&m| m));
    }

    #[test]
    fn seeded() {
        assert_eq!(mask_spans(160, 0.2, 10, 9), mask_spans(160, 0.2, 10, 9));
    }

    #[test]
    fn monte_carlo_fraction() {
        // Enumerate 100 seeds of the sampling rule and average the masked fraction.
        let mean: f64 = (0..100)
            .map(|s| mask_spans(160, 0.1, 10, s).iter().filter(|&&m| m).count() as f64 / 160.0)
            .sum::<f64>()
            / 100.0;
        assert!((0.10..=0.16).contains(&mean), "{mean}");
    }
}
