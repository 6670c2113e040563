//! Video-level cross-validation folds and target-wise fold selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SageError};

/// A partition of video ids into `k` folds; no video straddles folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// A single fold holding every id: training with nothing held out.
    pub fn single(video_ids: &[String]) -> Self {
        FoldAssignment {
            k: 1,
            assignment: video_ids.iter().map(|id| (id.clone(), 0)).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, video_id: &str) -> Option<usize> {
        self.assignment.get(video_id).copied()
    }

    /// Ids assigned to `fold`, in sorted order.
    pub fn videos_in(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Number of videos per fold, indexed by fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Splits `video_ids` into `k` folds: ids are sorted, shuffled by `seed`,
/// and dealt round-robin, so fold sizes differ by at most one and the
/// assignment depends only on the id set, `k`, and `seed`.
pub fn kfold_split(video_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(SageError::Config("fold count must be >= 1".into()));
    }
    if k > video_ids.len() {
        return Err(SageError::Config(format!(
            "cannot split {} videos into {k} folds",
            video_ids.len()
        )));
    }
    let mut ids: Vec<String> = video_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != video_ids.len() {
        return Err(SageError::Config("duplicate video ids in fold split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignment = ids.into_iter().enumerate().map(|(i, id)| (id, i % k)).collect();
    Ok(FoldAssignment { k, assignment })
}

/// Picks the fold with the best validation concordance independently for
/// each target: `(fold for valence, fold for arousal)`. Ties go to the
/// lowest fold index.
pub fn select_best_fold_per_target(reports: &[(f64, f64)]) -> Result<(usize, usize)> {
    if reports.is_empty() {
        return Err(SageError::Contract("no fold reports to select from".into()));
    }
    let argmax = |pick: fn(&(f64, f64)) -> f64| {
        let mut best = 0usize;
        for (i, r) in reports.iter().enumerate() {
            if pick(r) > pick(&reports[best]) {
                best = i;
            }
        }
        best
    };
    Ok((argmax(|r| r.0), argmax(|r| r.1)))
}
