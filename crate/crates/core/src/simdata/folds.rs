use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ClusteredDataset;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::stats::Split;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Cluster-stratified k-fold partition of the seen-site rows plus the fixed
/// unseen-site test set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
    pub unseen: Vec<usize>,
}

/// Deals each seen cluster's rows round-robin over `k` folds after a seeded
/// shuffle. The starting fold rotates between clusters so fold sizes stay
/// within one row of each other.
pub fn plan_folds(data: &ClusteredDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be >= 2, got {k}")));
    }
    let mut by_cluster = vec![Vec::new(); data.n_seen];
    let mut unseen = Vec::new();
    for i in 0..data.len() {
        match data.split[i] {
            Split::UnseenTest => unseen.push(i),
            _ => by_cluster[data.cluster[i]].push(i),
        }
    }
    if let Some((c, rows)) = by_cluster.iter().enumerate().find(|(_, r)| r.len() < k) {
        return Err(Error::Data(format!(
            "cluster {} has {} samples, fewer than the {k} folds",
            data.cluster_names[c],
            rows.len()
        )));
    }

    let mut rng = stream(seed, "folds", 0);
    let mut test = vec![Vec::new(); k];
    let mut offset = 0;
    for rows in &mut by_cluster {
        rows.shuffle(&mut rng);
        for (r, &i) in rows.iter().enumerate() {
            test[(offset + r) % k].push(i);
        }
        offset = (offset + rows.len()) % k;
    }
    let seen: Vec<usize> = by_cluster.concat();
    let folds = test
        .into_iter()
        .map(|mut t| {
            t.sort_unstable();
            let mut in_test = vec![false; data.len()];
            for &i in &t {
                in_test[i] = true;
            }
            let mut train: Vec<usize> = seen.iter().copied().filter(|&i| !in_test[i]).collect();
            train.sort_unstable();
            Fold { train, test: t }
        })
        .collect();
    Ok(FoldPlan { k, folds, unseen })
}
