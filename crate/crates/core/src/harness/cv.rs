use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// splitmix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent, reproducible child seed for `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(1)))
}

/// Trial-wise nested cross-validation assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
    /// Test trials of each outer fold.
    pub trial_assignments: Vec<Vec<usize>>,
    /// For each outer fold, its training trials split into inner folds.
    pub inner_assignments: Vec<Vec<Vec<usize>>>,
}

fn deal(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for (i, &t) in items.iter().enumerate() {
        folds[i % k].push(t);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// Shuffles `trials` with `seed` and deals them into `k` folds.
pub fn partition(trials: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut shuffled = trials.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    deal(&shuffled, k)
}

pub fn make_cv_plan(trial_count: usize, outer: usize, inner: usize, seed: u64) -> Result<CvPlan> {
    if outer < 2 || outer > trial_count {
        return Err(Error::contract(
            "make_cv_plan",
            format!("{outer} outer folds need between 2 and {trial_count} trials"),
        ));
    }
    let all: Vec<usize> = (0..trial_count).collect();
    let trial_assignments = partition(&all, outer, seed);
    let mut inner_assignments = Vec::with_capacity(outer);
    for (f, test) in trial_assignments.iter().enumerate() {
        let train: Vec<usize> = (0..trial_count).filter(|t| !test.contains(t)).collect();
        if inner < 2 || inner > train.len() {
            return Err(Error::contract(
                "make_cv_plan",
                format!("{inner} inner folds need between 2 and {} training trials", train.len()),
            ));
        }
        inner_assignments.push(partition(&train, inner, derive_seed(seed, f as u64)));
    }
    Ok(CvPlan { outer_folds: outer, inner_folds: inner, seed, trial_assignments, inner_assignments })
}

impl CvPlan {
    /// All training trials of outer fold `f`, ascending.
    pub fn train_trials(&self, f: usize) -> Vec<usize> {
        let mut t: Vec<usize> = self.inner_assignments[f].iter().flatten().copied().collect();
        t.sort_unstable();
        t
    }

    pub fn trial_count(&self) -> usize {
        self.trial_assignments.iter().map(Vec::len).sum()
    }
}
