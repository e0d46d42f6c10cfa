use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded;

/// `k` disjoint test folds covering every sample index exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    folds: Vec<Vec<usize>>,
    n: usize,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// All indices outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut in_test = vec![false; self.n];
        for &i in &self.folds[fold] {
            in_test[i] = true;
        }
        (0..self.n).filter(|&i| !in_test[i]).collect()
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }
}

/// Stratified k-fold split of `labels`.
///
/// Each class is shuffled with the seeded generator; the class-ordered
/// sequence (positives first) is then dealt round-robin over the folds, so
/// fold sizes and per-class counts each differ by at most one. Test indices
/// within a fold are sorted ascending.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldSplit> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Split(format!("k must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Split(format!("k = {k} exceeds the {n} available samples")));
    }
    let mut rng = seeded(seed);
    let mut order = Vec::with_capacity(n);
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if !members.is_empty() && members.len() < k {
            log::warn!(
                "class {class} has {} members for {k} folds; some folds will contain none",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit { folds, n })
}
