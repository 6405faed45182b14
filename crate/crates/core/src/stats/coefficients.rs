//! Gradient-based covariate coefficients pooled over draws and folds.

use serde::{Deserialize, Serialize};

use super::pooling::{pool_draws, PooledStat, Tail};
use crate::armed::{effect_gradient, Effect, Workspace};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::uq::{Draw, PosteriorSampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Mean of the per-sample input gradients.
    PerSampleMean,
    /// Gradient at the mean input.
    GradientAtMean,
}

impl Averaging {
    pub const ALL: [Averaging; 2] = [Averaging::PerSampleMean, Averaging::GradientAtMean];

    pub fn name(self) -> &'static str {
        match self {
            Averaging::PerSampleMean => "per-sample-mean",
            Averaging::GradientAtMean => "gradient-at-mean",
        }
    }
}

pub fn effect_name(e: Effect) -> &'static str {
    match e {
        Effect::Fixed => "fixed",
        Effect::Mixed => "mixed",
        Effect::Random => "random",
    }
}

/// Logit-scale coefficient vector of one draw on the rows of `x`, with
/// membership rows `z`.
pub fn draw_coefficients<T: Scalar>(
    draw: &Draw<'_, T>,
    x: &Matrix<T>,
    z: Option<&Matrix<T>>,
    effect: Effect,
    averaging: Averaging,
) -> Result<Vec<f64>> {
    let p = draw.params.as_ref();
    let d = p.layout().n_features();
    let c = p.layout().n_clusters();
    if x.cols() != d {
        return Err(Error::Argument(format!("{} columns, model expects {d}", x.cols())));
    }
    if x.rows() == 0 {
        return Err(Error::Argument("no rows to evaluate coefficients on".into()));
    }
    let zeros;
    let z = match z {
        Some(z) if z.rows() == x.rows() && z.cols() == c => z,
        Some(_) => return Err(Error::Argument("membership shape does not match the inputs".into())),
        None if effect == Effect::Fixed => {
            zeros = Matrix::zeros(x.rows(), c);
            &zeros
        }
        None => {
            return Err(Error::Argument(format!(
                "{} effects need cluster membership",
                effect_name(effect)
            )))
        }
    };
    let mut ws = Workspace::new(p);
    let mut g = vec![T::zero(); d];
    let mut acc = vec![0.0; d];
    match averaging {
        Averaging::PerSampleMean => {
            for i in 0..x.rows() {
                effect_gradient(p, x.row(i), z.row(i), effect, false, draw.fe_mask.as_ref(), &mut ws, &mut g);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v.to_f64_lossy();
                }
            }
            let n = x.rows() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Averaging::GradientAtMean => {
            let xm = x.column_means();
            let zm = z.column_means();
            effect_gradient(p, &xm, &zm, effect, false, draw.fe_mask.as_ref(), &mut ws, &mut g);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a = v.to_f64_lossy();
            }
        }
    }
    Ok(acc)
}

/// The evaluation set of one fold.
#[derive(Clone, Copy, Debug)]
pub struct FoldEvaluation<'a, T> {
    pub sampler: &'a PosteriorSampler<T>,
    pub x: &'a Matrix<T>,
    pub z: Option<&'a Matrix<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateCoefficient {
    pub feature: String,
    pub probe: bool,
    pub effect: Effect,
    pub averaging: Averaging,
    /// Mean of the fold means.
    pub mean: f64,
    /// Pooled test; `None` for single-draw models.
    pub stat: Option<PooledStat>,
    /// 1 for the largest |mean|.
    pub rank: usize,
    /// Values per fold, per draw.
    pub values: Vec<Vec<f64>>,
}

/// Ranks by decreasing magnitude; equal magnitudes keep input order.
pub fn rank_by_magnitude(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut rank = vec![0; values.len()];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

pub fn covariate_coefficients<T: Scalar>(
    folds: &[FoldEvaluation<'_, T>],
    names: &[String],
    probes: &[bool],
    effect: Effect,
    averaging: Averaging,
) -> Result<Vec<CovariateCoefficient>> {
    let first = folds.first().ok_or_else(|| Error::Argument("no folds".into()))?;
    let d = first.x.cols();
    if names.len() != d || probes.len() != d {
        return Err(Error::Argument(format!("{} names and {} probe flags for {d} features", names.len(), probes.len())));
    }
    // values[feature][fold][draw]
    let mut values = vec![vec![Vec::new(); folds.len()]; d];
    for (f, fold) in folds.iter().enumerate() {
        for i in 0..fold.sampler.draws {
            let c = draw_coefficients(&fold.sampler.draw(i)?, fold.x, fold.z, effect, averaging)?;
            for (j, v) in c.into_iter().enumerate() {
                values[j][f].push(v);
            }
        }
    }
    let single = folds.iter().any(|f| f.sampler.draws < 2);
    let mut out = Vec::with_capacity(d);
    for (j, vals) in values.into_iter().enumerate() {
        let stat = if single { None } else { Some(pool_draws(&vals, Tail::TwoSided)?) };
        let mean = vals
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .sum::<f64>()
            / vals.len() as f64;
        out.push(CovariateCoefficient {
            feature: names[j].clone(),
            probe: probes[j],
            effect,
            averaging,
            mean,
            stat,
            rank: 0,
            values: vals,
        });
    }
    let means: Vec<f64> = out.iter().map(|c| c.mean).collect();
    for (c, r) in out.iter_mut().zip(rank_by_magnitude(&means)) {
        c.rank = r;
    }
    Ok(out)
}
