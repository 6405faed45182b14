//! Synthetic clustered binary-classification data with site-confounded probes.

mod folds;
mod generate;
mod io;
mod probes;

use serde::{Deserialize, Serialize};

pub use io::{load_csv, write_csv, CsvSchema};
pub use folds::{plan_folds, Fold, FoldPlan};
pub use generate::{generate, GeneratorConfig};
pub use probes::{attach_probes, ProbeConfig, N_PROBES};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::stats::Split;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Biological,
    Probe,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn biological(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Biological,
        }
    }

    pub fn probe(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Probe,
        }
    }
}

/// Samples grouped by cluster.
///
/// Cluster ids `0..n_seen` are the seen clusters (available for training);
/// the remaining ids are held out. Features are z-scored with statistics of
/// the rows tagged [`Split::Train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteredDataset {
    pub x: Matrix<f64>,
    pub y: Vec<u8>,
    pub cluster: Vec<usize>,
    pub cluster_names: Vec<String>,
    pub n_seen: usize,
    pub features: Vec<FeatureMeta>,
    pub split: Vec<Split>,
    /// True outcome probability per sample, when known.
    pub outcome_prob: Option<Vec<f64>>,
}

impl ClusteredDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_names.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn probe_columns(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FeatureKind::Probe)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn is_seen(&self, row: usize) -> bool {
        self.cluster[row] < self.n_seen
    }

    /// Rows of seen clusters, in dataset order.
    pub fn seen_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_seen(i)).collect()
    }

    pub fn unseen_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_seen(i)).collect()
    }

    /// One-hot cluster design over all clusters.
    pub fn z(&self) -> Matrix<f64> {
        Matrix::one_hot(&self.cluster, self.n_clusters()).expect("cluster ids validated")
    }

    /// One-hot design over the seen clusters for the given rows.
    pub fn z_seen<T: Scalar>(&self, rows: &[usize]) -> Result<Matrix<T>> {
        let ids: Vec<usize> = rows.iter().map(|&i| self.cluster[i]).collect();
        if let Some(&c) = ids.iter().find(|&&c| c >= self.n_seen) {
            return Err(Error::Split(format!(
                "cluster {} is not a seen cluster",
                self.cluster_names[c]
            )));
        }
        Matrix::one_hot(&ids, self.n_seen)
    }

    /// Feature rows converted to the working scalar type.
    pub fn x_rows<T: Scalar>(&self, rows: &[usize]) -> Matrix<T> {
        let d = self.n_features();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend(self.x.row(i).iter().map(|&v| T::lit(v)));
        }
        Matrix::from_vec(rows.len(), d, data).expect("shape by construction")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.x.rows() != n || self.cluster.len() != n || self.split.len() != n {
            return Err(Error::Data(format!(
                "inconsistent row counts: x {}, y {n}, cluster {}, split {}",
                self.x.rows(),
                self.cluster.len(),
                self.split.len()
            )));
        }
        if self.features.len() != self.x.cols() {
            return Err(Error::Data(format!(
                "{} feature tags for {} columns",
                self.features.len(),
                self.x.cols()
            )));
        }
        if self.n_seen > self.n_clusters() {
            return Err(Error::Data("more seen clusters than clusters".into()));
        }
        if let Some(p) = &self.outcome_prob {
            if p.len() != n {
                return Err(Error::Data("outcome probability length mismatch".into()));
            }
        }
        if let Some(&v) = self.y.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("non-binary target {v}")));
        }
        let mut has_train = vec![false; self.n_seen];
        for i in 0..n {
            let c = self.cluster[i];
            if c >= self.n_clusters() {
                return Err(Error::Data(format!("cluster id {c} out of range")));
            }
            let seen = c < self.n_seen;
            match (self.split[i], seen) {
                (Split::UnseenTest, true) | (Split::Train | Split::SeenTest, false) => {
                    return Err(Error::Split(format!(
                        "row {i}: split {} inconsistent with cluster {}",
                        self.split[i].name(),
                        self.cluster_names[c]
                    )));
                }
                (Split::Train, true) => has_train[c] = true,
                _ => {}
            }
        }
        if let Some(c) = has_train.iter().position(|&t| !t) {
            return Err(Error::Split(format!(
                "seen cluster {} has no training rows",
                self.cluster_names[c]
            )));
        }
        Ok(())
    }

    /// Z-scores every column with the mean and sd of the training rows.
    /// Constant columns are centred only.
    pub(crate) fn standardize(&mut self) {
        let train: Vec<usize> = (0..self.len())
            .filter(|&i| self.split[i] == Split::Train)
            .collect();
        if train.is_empty() {
            return;
        }
        for j in 0..self.n_features() {
            standardize_column(&mut self.x, j, &train);
        }
    }
}

pub(crate) fn standardize_column(x: &mut Matrix<f64>, j: usize, train: &[usize]) {
    let n = train.len() as f64;
    let mean = train.iter().map(|&i| x.get(i, j)).sum::<f64>() / n;
    let var = train.iter().map(|&i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    for i in 0..x.rows() {
        x.set(i, j, (x.get(i, j) - mean) / sd);
    }
}
