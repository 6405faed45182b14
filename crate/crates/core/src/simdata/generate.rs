use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::probes::{attach_probes, ProbeConfig};
use super::{ClusteredDataset, FeatureMeta};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream};
use crate::scalar::sigmoid;
use crate::stats::Split;

/// Weight of the `x_0 x_1` interaction relative to the nonlinearity knob.
const PRODUCT_WEIGHT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_clusters: usize,
    pub n_seen: usize,
    /// Inclusive range of samples per cluster, drawn uniformly.
    pub min_cluster_size: usize,
    pub max_cluster_size: usize,
    pub d_bio: usize,
    pub k_informative: usize,
    /// Sd of the per-cluster random intercept.
    pub sigma_mu0: f64,
    /// Sd of the per-cluster random slopes on the informative features.
    pub sigma_mu1: f64,
    /// Sd of per-cluster mean shifts of every biological feature.
    pub cluster_shift: f64,
    pub fe_strength: f64,
    /// Blend between linear (0) and tanh-warped (1) main effects; also
    /// scales the pairwise product term.
    pub nonlinearity: f64,
    pub base_rate: f64,
    pub probes: Option<ProbeConfig>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_clusters: 34,
            n_seen: 20,
            min_cluster_size: 10,
            max_cluster_size: 32,
            d_bio: 20,
            k_informative: 6,
            sigma_mu0: 1.0,
            sigma_mu1: 0.25,
            cluster_shift: 0.0,
            fe_strength: 1.0,
            nonlinearity: 0.5,
            base_rate: 0.30,
            probes: Some(ProbeConfig::default()),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_mu0", self.sigma_mu0),
            ("sigma_mu1", self.sigma_mu1),
            ("cluster_shift", self.cluster_shift),
            ("fe_strength", self.fe_strength),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Argument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.nonlinearity) {
            return Err(Error::Argument(format!(
                "nonlinearity must lie in [0, 1], got {}",
                self.nonlinearity
            )));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::Argument(format!(
                "base_rate must lie in (0, 1), got {}",
                self.base_rate
            )));
        }
        if self.n_seen == 0 || self.n_seen > self.n_clusters {
            return Err(Error::Config(format!(
                "n_seen must lie in 1..={}, got {}",
                self.n_clusters, self.n_seen
            )));
        }
        if self.min_cluster_size == 0 || self.min_cluster_size > self.max_cluster_size {
            return Err(Error::Config(format!(
                "invalid cluster size range {}..={}",
                self.min_cluster_size, self.max_cluster_size
            )));
        }
        if self.d_bio == 0 || self.k_informative > self.d_bio {
            return Err(Error::Config(format!(
                "k_informative {} must not exceed d_bio {} (d_bio >= 1)",
                self.k_informative, self.d_bio
            )));
        }
        if let Some(p) = &self.probes {
            p.validate()?;
        }
        Ok(())
    }

    /// Fixed-effect coefficient of informative feature `k`: alternating
    /// signs with slowly decaying magnitude.
    pub fn beta(k: usize) -> f64 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sign / (1.0 + 0.25 * k as f64)
    }

    /// Population-level part of the latent logit, without intercept.
    pub fn fixed_effect(&self, x: &[f64]) -> f64 {
        let nu = self.nonlinearity;
        let mut f = 0.0;
        for (k, &v) in x.iter().take(self.k_informative).enumerate() {
            f += Self::beta(k) * ((1.0 - nu) * v + nu * v.tanh());
        }
        if self.k_informative >= 2 {
            f += nu * PRODUCT_WEIGHT * x[0] * x[1];
        }
        self.fe_strength * f
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Intercept giving a mean outcome probability of `rate`.
fn calibrate_intercept(eta: &[f64], rate: f64) -> f64 {
    let mean_p = |b: f64| eta.iter().map(|&e| sigmoid(b + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a dataset from the mixed-effects logistic model
/// `eta = b + f(x) + mu0_j + sum_k mu1_jk x_k`.
///
/// Clusters are numbered by decreasing size; the `n_seen` largest are seen.
pub fn generate(cfg: &GeneratorConfig) -> Result<ClusteredDataset> {
    cfg.validate()?;
    let c = cfg.n_clusters;
    let k = cfg.k_informative;

    let mut size_rng = stream(cfg.seed, "cluster-size", 0);
    let mut sizes: Vec<usize> = (0..c)
        .map(|_| size_rng.random_range(cfg.min_cluster_size..=cfg.max_cluster_size))
        .collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));

    let mut re_rng = stream(cfg.seed, "random-effects", 0);
    let mu0: Vec<f64> = (0..c).map(|_| cfg.sigma_mu0 * normal(&mut re_rng)).collect();
    let mu1: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..k).map(|_| cfg.sigma_mu1 * normal(&mut re_rng)).collect())
        .collect();
    let shift: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..cfg.d_bio).map(|_| cfg.cluster_shift * normal(&mut re_rng)).collect())
        .collect();

    let n: usize = sizes.iter().sum();
    let mut feat_rng = stream(cfg.seed, "features", 0);
    let mut x = Matrix::zeros(n, cfg.d_bio);
    let mut cluster = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    for (j, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let i = cluster.len();
            let row = x.row_mut(i);
            for (v, s) in row.iter_mut().zip(&shift[j]) {
                *v = normal(&mut feat_rng) + s;
            }
            let re: f64 = mu0[j] + mu1[j].iter().zip(row.iter()).map(|(m, v)| m * v).sum::<f64>();
            eta.push(cfg.fixed_effect(row) + re);
            cluster.push(j);
        }
    }

    let b = calibrate_intercept(&eta, cfg.base_rate);
    let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(b + e)).collect();
    let mut y_rng = stream(cfg.seed, "outcome", 0);
    let y: Vec<u8> = prob
        .iter()
        .map(|&p| u8::from(y_rng.random::<f64>() < p))
        .collect();

    let split = cluster
        .iter()
        .map(|&j| if j < cfg.n_seen { Split::Train } else { Split::UnseenTest })
        .collect();
    let mut data = ClusteredDataset {
        x,
        y,
        cluster,
        cluster_names: (0..c).map(|j| format!("site-{j:02}")).collect(),
        n_seen: cfg.n_seen,
        features: (0..cfg.d_bio).map(|j| FeatureMeta::biological(format!("x{:02}", j + 1))).collect(),
        split,
        outcome_prob: Some(prob),
    };
    data.standardize();
    match &cfg.probes {
        Some(p) => attach_probes(data, p, derive_seed(cfg.seed, "probes", 0)),
        None => Ok(data),
    }
}
