use std::f64::consts::FRAC_PI_2;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{standardize_column, ClusteredDataset, FeatureMeta};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::stream;
use crate::scalar::sigmoid;
use crate::stats::Split;

pub const N_PROBES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Sd of additive Gaussian noise, before standardization.
    pub noise: f64,
    /// Remove the training-weighted mean of each site factor so probes
    /// carry no population-level association with the outcome.
    pub center: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            noise: 0.1,
            center: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) {
            return Err(Error::Argument(format!("probe noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Site factor `g_m` of a two-dimensional cluster embedding.
fn site_factor(m: usize, e: [f64; 2]) -> f64 {
    match m {
        0 => e[0] * e[0] - 1.0,
        1 => (2.0 * e[1]).sin(),
        2 => {
            if e[0] + e[1] > 0.0 {
                1.0
            } else {
                -1.0
            }
        }
        3 => 0.5 * (e[0] - e[1]).powi(2) - 1.0,
        _ => (e[0] + 2.0 * e[1]).sin(),
    }
}

/// Strictly increasing outcome factor `h_m` on (0, 1).
fn outcome_factor(m: usize, p: f64) -> f64 {
    match m {
        0 => p * p,
        1 => (FRAC_PI_2 * p).sin(),
        2 => sigmoid(8.0 * (p - 0.5)),
        3 => p.sqrt(),
        _ => p * p * p,
    }
}

/// Appends five probe columns `g_m(e_j) * h_m(p_s) + noise`, z-scored on the
/// training rows and tagged as probes.
///
/// `p_s` is the per-sample outcome probability and `e_j` a random embedding
/// of the sample's cluster.
pub fn attach_probes(mut data: ClusteredDataset, cfg: &ProbeConfig, seed: u64) -> Result<ClusteredDataset> {
    cfg.validate()?;
    let prob = data
        .outcome_prob
        .clone()
        .ok_or_else(|| Error::Argument("probes need a per-sample outcome probability".into()))?;

    let mut emb_rng = stream(seed, "probe-embedding", 0);
    let emb: Vec<[f64; 2]> = (0..data.n_clusters())
        .map(|_| [StandardNormal.sample(&mut emb_rng), StandardNormal.sample(&mut emb_rng)])
        .collect();
    let train: Vec<usize> = (0..data.len())
        .filter(|&i| data.split[i] == Split::Train)
        .collect();

    let mut g: Vec<[f64; N_PROBES]> = emb
        .iter()
        .map(|&e| std::array::from_fn(|m| site_factor(m, e)))
        .collect();
    if cfg.center && !train.is_empty() {
        for m in 0..N_PROBES {
            let mean = train.iter().map(|&i| g[data.cluster[i]][m]).sum::<f64>() / train.len() as f64;
            for gj in &mut g {
                gj[m] -= mean;
            }
        }
    }

    let mut noise_rng = stream(seed, "probe-noise", 0);
    let n = data.len();
    let mut probes = Matrix::zeros(n, N_PROBES);
    for i in 0..n {
        let gj = &g[data.cluster[i]];
        for m in 0..N_PROBES {
            let eps: f64 = StandardNormal.sample(&mut noise_rng);
            probes.set(i, m, gj[m] * outcome_factor(m, prob[i]) + cfg.noise * eps);
        }
    }
    if !train.is_empty() {
        for m in 0..N_PROBES {
            standardize_column(&mut probes, m, &train);
        }
    }
    data.x = data.x.hstack(&probes)?;
    data.features
        .extend((1..=N_PROBES).map(|m| FeatureMeta::probe(format!("probe_{m}"))));
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::{generate, GeneratorConfig};

    fn big(noise: f64) -> ClusteredDataset {
        generate(&GeneratorConfig {
            n_clusters: 100,
            n_seen: 100,
            min_cluster_size: 50,
            max_cluster_size: 50,
            probes: Some(ProbeConfig { noise, center: true }),
            seed: 7,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    /// Plug-in mutual information between a decile-binned feature and a
    /// binary label, in nats.
    fn binned_mi(x: &[f64], y: &[u8]) -> f64 {
        let r = ranks(x);
        let n = x.len() as f64;
        let mut joint = [[0.0f64; 2]; 10];
        for (ri, &yi) in r.iter().zip(y) {
            let bin = ((ri / n) * 10.0) as usize;
            joint[bin.min(9)][yi as usize] += 1.0 / n;
        }
        let py: [f64; 2] = [0, 1].map(|c| joint.iter().map(|row| row[c]).sum());
        joint
            .iter()
            .flat_map(|row| {
                let px: f64 = row.iter().sum();
                (0..2).map(move |c| (row[c], px, c))
            })
            .filter(|&(pxy, _, _)| pxy > 0.0)
            .map(|(pxy, px, c)| pxy * (pxy / (px * py[c])).ln())
            .sum()
    }

    #[test]
    fn five_tagged_probes() {
        let d = generate(&GeneratorConfig::default()).unwrap();
        assert_eq!(d.probe_columns().len(), N_PROBES);
        assert_eq!(d.n_features(), 20 + N_PROBES);
        assert!(d.features[20..].iter().all(|f| f.name.starts_with("probe_")));
    }

    #[test]
    fn missing_probability_is_rejected() {
        let mut d = generate(&GeneratorConfig { probes: None, ..GeneratorConfig::default() }).unwrap();
        d.outcome_prob = None;
        assert!(matches!(
            attach_probes(d, &ProbeConfig::default(), 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn noiseless_probes_track_outcome_probability_within_sites() {
        let d = big(0.0);
        let p = d.outcome_prob.as_ref().unwrap();
        let strong = d
            .probe_columns()
            .into_iter()
            .filter(|&col| {
                let mut total = 0.0;
                for c in 0..d.n_clusters() {
                    let rows: Vec<usize> = (0..d.len()).filter(|&i| d.cluster[i] == c).collect();
                    let a: Vec<f64> = rows.iter().map(|&i| d.x.get(i, col)).collect();
                    let b: Vec<f64> = rows.iter().map(|&i| p[i]).collect();
                    total += spearman(&a, &b).abs();
                }
                total / d.n_clusters() as f64 > 0.5
            })
            .count();
        assert!(strong >= 4, "{strong} probes with |rho| > 0.5");
    }

    #[test]
    fn pure_noise_probes_carry_no_information() {
        let d = big(1e6);
        assert_eq!(d.len(), 5000);
        for col in d.probe_columns() {
            let mi = binned_mi(&d.x.column(col), &d.y);
            assert!(mi < 0.01, "probe {col}: MI {mi}");
        }
    }

    #[test]
    fn probes_are_site_associated() {
        let d = big(ProbeConfig::default().noise);
        for col in d.probe_columns() {
            let v = d.x.column(col);
            let mut means = vec![(0.0, 0.0); d.n_clusters()];
            for (i, &c) in d.cluster.iter().enumerate() {
                means[c].0 += v[i];
                means[c].1 += 1.0;
            }
            let between: f64 = means.iter().map(|(s, k)| k * (s / k).powi(2)).sum::<f64>() / d.len() as f64;
            assert!(between > 0.1, "probe {col}: between-site share {between}");
        }
    }
}
