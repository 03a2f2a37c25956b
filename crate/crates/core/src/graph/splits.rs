//! Stratified train/validation/test splits with a 1:2 validation:test ratio.

use super::SparseGraph;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub roles: Vec<Role>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn nodes_with(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn mask(&self, role: Role) -> Vec<bool> {
        self.roles.iter().map(|&r| r == role).collect()
    }
}

/// Stratified split: per class, `ceil(train_ratio · class_size)` (min 1) nodes
/// go to train; the remainder splits 1:2 into validation:test. Deterministic
/// given the seed.
pub fn make_splits(graph: &SparseGraph, train_ratio: f64, seed: u64) -> Result<SplitAssignment> {
    let labels = graph
        .labels()
        .ok_or_else(|| Error::InvalidInput("make_splits requires labels".into()))?;
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train_ratio {train_ratio} outside (0, 1)"
        )));
    }
    let mut rng = super::seeded_rng(seed);
    let mut roles = vec![Role::Test; labels.len()];
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 3 {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        // f64 product noise (e.g. 0.4 * 90 = 36.000000000000004) must not
        // bump the ceiling to the next integer
        let n_train = ((train_ratio * members.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        let n_train = n_train.min(members.len());
        let remainder = members.len() - n_train;
        let n_val = ((remainder as f64) / 3.0).round() as usize;
        for (idx, &node) in members.iter().enumerate() {
            roles[node] = if idx < n_train {
                Role::Train
            } else if idx < n_train + n_val {
                Role::Validation
            } else {
                Role::Test
            };
        }
    }
    Ok(SplitAssignment { roles, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseGraph;

    fn labeled_graph(class_sizes: (usize, usize)) -> SparseGraph {
        let n = class_sizes.0 + class_sizes.1;
        let mut labels = vec![0u8; class_sizes.0];
        labels.extend(vec![1u8; class_sizes.1]);
        SparseGraph::from_edges(n, &[], vec![0.0; n], 1, Some(labels)).unwrap()
    }

    fn count(roles: &[Role], labels: &[u8], role: Role, class: u8) -> usize {
        roles
            .iter()
            .zip(labels)
            .filter(|(&r, &l)| r == role && l == class)
            .count()
    }

    #[test]
    fn stratified_counts_match_oracle() {
        // 100 nodes, 90/10, ratio 0.4 → train 36+4, val 18+2, test 36+4
        let g = labeled_graph((90, 10));
        let s = make_splits(&g, 0.4, 9).unwrap();
        let labels = g.labels().unwrap();
        assert_eq!(count(&s.roles, labels, Role::Train, 0), 36);
        assert_eq!(count(&s.roles, labels, Role::Train, 1), 4);
        assert_eq!(count(&s.roles, labels, Role::Validation, 0), 18);
        assert_eq!(count(&s.roles, labels, Role::Validation, 1), 2);
        assert_eq!(count(&s.roles, labels, Role::Test, 0), 36);
        assert_eq!(count(&s.roles, labels, Role::Test, 1), 4);
    }

    #[test]
    fn one_percent_ratio_keeps_one_train_node_per_class() {
        let g = labeled_graph((100, 100));
        let s = make_splits(&g, 0.01, 1).unwrap();
        let labels = g.labels().unwrap();
        assert_eq!(count(&s.roles, labels, Role::Train, 0), 1);
        assert_eq!(count(&s.roles, labels, Role::Train, 1), 1);
    }

    #[test]
    fn same_seed_identical_assignment() {
        let g = labeled_graph((50, 20));
        assert_eq!(make_splits(&g, 0.4, 5).unwrap(), make_splits(&g, 0.4, 5).unwrap());
        assert_ne!(make_splits(&g, 0.4, 5).unwrap(), make_splits(&g, 0.4, 6).unwrap());
    }

    #[test]
    fn tiny_class_is_rejected() {
        let g = labeled_graph((10, 2));
        assert!(matches!(
            make_splits(&g, 0.4, 0),
            Err(Error::ClassTooSmall { class: 1, count: 2 })
        ));
    }

    #[test]
    fn roles_partition_all_nodes() {
        let g = labeled_graph((37, 13));
        let s = make_splits(&g, 0.3, 123).unwrap();
        assert_eq!(s.roles.len(), 50);
        let labels = g.labels().unwrap();
        for class in [0, 1] {
            let size = labels.iter().filter(|&&l| l == class).count();
            let train = count(&s.roles, labels, Role::Train, class);
            let want = (0.3f64 * size as f64 - 1e-9).ceil() as usize;
            assert!(train.abs_diff(want) <= 1);
        }
    }
}
