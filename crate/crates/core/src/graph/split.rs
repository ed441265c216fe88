use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AttributedGraph;
use crate::error::{Error, Result};

/// Disjoint train/validation/test node masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

impl DataSplit {
    pub fn train_indices(&self) -> Vec<usize> {
        indices(&self.train_mask)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        indices(&self.val_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices(&self.test_mask)
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (count(&self.train_mask), count(&self.val_mask), count(&self.test_mask))
    }

    /// Checks disjointness, coverage and that every class reaches the train set.
    pub fn validate(&self, g: &AttributedGraph) -> Result<()> {
        let n = g.num_nodes();
        if self.train_mask.len() != n || self.val_mask.len() != n || self.test_mask.len() != n {
            return Err(Error::Split(format!("mask lengths differ from node count {n}")));
        }
        for i in 0..n {
            let hits = [self.train_mask[i], self.val_mask[i], self.test_mask[i]]
                .iter()
                .filter(|&&b| b)
                .count();
            if hits != 1 {
                return Err(Error::Split(format!("node {i} is in {hits} masks")));
            }
        }
        let mut seen = vec![false; g.class_count()];
        for i in self.train_indices() {
            seen[g.labels()[i]] = true;
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(Error::Split(format!("class {c} has no training node")));
        }
        Ok(())
    }
}

/// Stratified split: each class is shuffled with a seeded generator and cut
/// into `round(train_ratio·n_c)` train and `round(val_ratio·n_c)` validation
/// nodes, the remainder going to test. Every part keeps at least one node per class.
pub fn make_splits(g: &AttributedGraph, train_ratio: f64, val_ratio: f64, seed: u64) -> Result<DataSplit> {
    if !(train_ratio > 0.0 && val_ratio > 0.0 && train_ratio + val_ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratios need 0 < train, 0 < val, train + val < 1; got {train_ratio} and {val_ratio}"
        )));
    }
    let n = g.num_nodes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.class_count()];
    for (i, &l) in g.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DataSplit {
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        test_mask: vec![false; n],
    };
    for (c, members) in by_class.iter_mut().enumerate() {
        let size = members.len();
        if size < 3 {
            return Err(Error::Split(format!(
                "class {c} has {size} members; stratifying needs at least 3"
            )));
        }
        members.shuffle(&mut rng);
        let n_train = ((train_ratio * size as f64).round() as usize).clamp(1, size - 2);
        let n_val = ((val_ratio * size as f64).round() as usize).clamp(1, size - n_train - 1);
        for (k, &i) in members.iter().enumerate() {
            if k < n_train {
                split.train_mask[i] = true;
            } else if k < n_train + n_val {
                split.val_mask[i] = true;
            } else {
                split.test_mask[i] = true;
            }
        }
    }
    Ok(split)
}
