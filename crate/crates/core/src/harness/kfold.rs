//! Stratified k-fold partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Splits sample indices into `k` folds, stratified by label. Each class is
/// shuffled and dealt round-robin; the dealing position carries over from
/// one class to the next so overall fold sizes also stay within one.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k_folds must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Config(format!("k = {k} exceeds the {} samples", labels.len())));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evals = vec![Vec::new(); k];
    let mut next = 0;
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: idx.len(),
                k,
            });
        }
        idx.shuffle(&mut rng);
        for i in idx {
            evals[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(evals
        .into_iter()
        .map(|mut eval| {
            eval.sort_unstable();
            let train = (0..labels.len()).filter(|i| eval.binary_search(i).is_err()).collect();
            Fold { train, eval }
        })
        .collect())
}
