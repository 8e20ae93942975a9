use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MetricsError, Result};

pub const DEFAULT_FOLDS: usize = 5;

/// Sample index → fold id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub assignments: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl FoldPlan {
    /// Shuffle indices, then deal them round-robin.
    pub fn new(n: usize, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 || n < folds {
            return Err(MetricsError::TooFewSamples { n, k: folds });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignments = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            assignments[i] = pos % folds;
        }
        Ok(FoldPlan {
            assignments,
            folds,
            seed,
        })
    }

    /// Keep every group (e.g. recording or subject) inside one fold.
    /// Groups are shuffled, then each goes to the currently smallest fold.
    pub fn grouped(groups: &[String], folds: usize, seed: u64) -> Result<Self> {
        let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            members.entry(g).or_default().push(i);
        }
        if folds < 2 || members.len() < folds {
            return Err(MetricsError::TooFewSamples {
                n: members.len(),
                k: folds,
            });
        }
        let mut keys: Vec<&str> = members.keys().copied().collect();
        keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut sizes = vec![0usize; folds];
        let mut assignments = vec![0; groups.len()];
        for k in keys {
            let f = (0..folds)
                .min_by_key(|&f| (sizes[f], f))
                .expect("folds >= 2");
            for &i in &members[k] {
                assignments[i] = f;
            }
            sizes[f] += members[k].len();
        }
        Ok(FoldPlan {
            assignments,
            folds,
            seed,
        })
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.folds];
        for &f in &self.assignments {
            s[f] += 1;
        }
        s
    }
}
