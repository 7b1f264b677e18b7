//! F1 and AUROC against brute-force definitions.

use ega::harness::{auroc, f1_score};
use ega::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_f1(preds: &[usize], labels: &[usize]) -> f64 {
    let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == 1 && l == 1).count() as f64;
    let fp = preds.iter().zip(labels).filter(|&(&p, &l)| p == 1 && l != 1).count() as f64;
    let fn_ = preds.iter().zip(labels).filter(|&(&p, &l)| p != 1 && l == 1).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let (precision, recall) = (tp / (tp + fp), tp / (tp + fn_));
    2.0 * precision * recall / (precision + recall)
}

fn brute_auroc(scores: &[f64], labels: &[usize]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

#[test]
pub fn f1_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let got = f1_score(&preds, &labels).unwrap();
        let want = brute_f1(&preds, &labels);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}

#[test]
pub fn auroc_matches_pairwise_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..1000 {
        let n = rng.random_range(2..50);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse scores in half the cases force many ties
        let scores: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..4) as f64 / 4.0).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        let got = auroc(&scores, &labels).unwrap();
        let want = brute_auroc(&scores, &labels);
        assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
pub fn degenerate_cases() {
    assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
    assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    assert!(matches!(auroc(&[0.1], &[1, 0]), Err(Error::LengthMismatch(1, 2))));

    assert_eq!(f1_score(&[0, 0, 0], &[0, 0, 0]).unwrap(), 0.0);
    assert_eq!(f1_score(&[1, 1], &[1, 1]).unwrap(), 1.0);
    assert_eq!(f1_score(&[1, 1], &[0, 0]).unwrap(), 0.0);
    assert!(f1_score(&[1], &[1, 0]).is_err());
}
