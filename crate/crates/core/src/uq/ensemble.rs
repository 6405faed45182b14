//! Independently trained model ensembles.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::armed::ArmedParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Subsample fractions admitted by the default grid.
pub const SUBSAMPLE_FRACTIONS: [f64; 3] = [0.7, 0.8, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Every member starts from its own random weights and sees all rows.
    RandomInit,
    /// Members share the initial weights and train on a random subset.
    Subsample { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EnsemblePosterior<T> {
    pub perturbation: Perturbation,
    pub members: Vec<ArmedParams<T>>,
    /// Training rows of each member.
    pub subsets: Vec<Vec<usize>>,
}

/// Number of rows a member trains on: ceil(fraction * n).
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    // Guard against products such as 0.9 * 100 = 90.00000000000001.
    let exact = fraction * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}

/// Draws ceil(fraction * n) of `rows` without replacement, keeping at least
/// one row of every cluster present in `rows`. Returned indices are sorted.
pub fn stratified_subsample<R: Rng + ?Sized>(
    rows: &[usize],
    cluster: &[usize],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        by_cluster.entry(cluster[r]).or_default().push(r);
    }
    let c = by_cluster.len();
    let n = rows.len();
    if fraction * (n as f64) < (2 * c) as f64 {
        return Err(Error::Data(format!(
            "subsample of {fraction} x {n} rows is too small to stratify over {c} clusters"
        )));
    }
    let size = subsample_size(n, fraction);
    let mut chosen = Vec::with_capacity(size);
    let mut rest = Vec::with_capacity(n);
    for members in by_cluster.values() {
        let pick = rng.random_range(0..members.len());
        chosen.push(members[pick]);
        rest.extend(members.iter().enumerate().filter(|&(i, _)| i != pick).map(|(_, &r)| r));
    }
    for i in index::sample(rng, rest.len(), size - c) {
        chosen.push(rest[i]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::collections::BTreeSet;

    #[test]
    fn size_is_exact_for_round_products() {
        assert_eq!(subsample_size(100, 0.9), 90);
        assert_eq!(subsample_size(100, 0.7), 70);
        assert_eq!(subsample_size(10, 0.75), 8);
        assert_eq!(subsample_size(7, 1.0), 7);
    }

    #[test]
    fn members_are_stratified_and_distinct() {
        let rows: Vec<usize> = (0..100).collect();
        let cluster: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let mut sets = Vec::new();
        for m in 0..30 {
            let s = stratified_subsample(&rows, &cluster, 0.9, &mut rng::stream(1, "subsample", m)).unwrap();
            assert_eq!(s.len(), 90);
            assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 90);
            let cl: BTreeSet<usize> = s.iter().map(|&r| cluster[r]).collect();
            assert_eq!(cl.len(), 5);
            sets.push(s);
        }
        for a in 0..30 {
            for b in a + 1..30 {
                assert_ne!(sets[a], sets[b]);
            }
        }
    }

    #[test]
    fn undersized_data_is_refused() {
        let rows: Vec<usize> = (0..10).collect();
        let cluster: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let err = stratified_subsample(&rows, &cluster, 0.9, &mut rng::stream(0, "s", 0)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
