//! Pooling of per-fold draw distributions with Satterthwaite degrees of freedom.

use serde::{Deserialize, Serialize};

use super::dist::{student_t_quantile, student_t_sf};
use crate::error::{Error, Result};

/// Summary of the draws of one fold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStat {
    pub mean: f64,
    /// Sample variance (n - 1 denominator).
    pub variance: f64,
    pub n: usize,
}

impl FoldStat {
    pub fn new(mean: f64, variance: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument(format!("a fold needs at least 2 draws, got {n}")));
        }
        if !(variance >= 0.0) || !mean.is_finite() {
            return Err(Error::Argument(format!("invalid fold summary mean={mean} var={variance}")));
        }
        Ok(Self { mean, variance, n })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Argument(format!("a fold needs at least 2 draws, got {n}")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self::new(mean, var, n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    /// H1: mean > 0.
    Greater,
    TwoSided,
}

/// Standard error and degrees of freedom over folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Satterthwaite {
    /// sqrt(sum s_i^2 / n_i).
    pub se: f64,
    pub df: f64,
    /// Every fold had zero variance; `df` falls back to sum(n_i - 1).
    pub zero_variance: bool,
}

pub fn satterthwaite_pool(folds: &[FoldStat]) -> Result<Satterthwaite> {
    if folds.is_empty() {
        return Err(Error::Argument("no folds to pool".into()));
    }
    let a: Vec<f64> = folds.iter().map(|f| f.variance / f.n as f64).collect();
    let sum: f64 = a.iter().sum();
    if sum == 0.0 {
        return Ok(Satterthwaite {
            se: 0.0,
            df: folds.iter().map(|f| (f.n - 1) as f64).sum(),
            zero_variance: true,
        });
    }
    let den: f64 = a
        .iter()
        .zip(folds)
        .map(|(ai, f)| ai * ai / (f.n - 1) as f64)
        .sum();
    Ok(Satterthwaite {
        se: sum.sqrt(),
        df: sum * sum / den,
        zero_variance: false,
    })
}

/// A pooled estimate with its test against zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledStat {
    /// Mean of the fold means.
    pub mean: f64,
    /// Standard error of `mean`.
    pub se: f64,
    pub df: f64,
    pub t: f64,
    pub p: f64,
    pub tail: Tail,
    /// Two-sided 95% interval, mean -/+ t(0.975, df) se.
    pub ci_low: f64,
    pub ci_high: f64,
    pub zero_variance: bool,
}

/// Tests H0: mean = 0 (two-sided) or mean <= 0 (greater).
///
/// The fold means are independent with variances s_i^2 / n_i, so their
/// average has standard error sqrt(sum s_i^2 / n_i) / k.
pub fn pooled_test(folds: &[FoldStat], tail: Tail) -> Result<PooledStat> {
    let s = satterthwaite_pool(folds)?;
    let k = folds.len() as f64;
    let mean = folds.iter().map(|f| f.mean).sum::<f64>() / k;
    let se = s.se / k;
    let t = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    let p = match tail {
        Tail::Greater => student_t_sf(t, s.df),
        Tail::TwoSided => (2.0 * student_t_sf(t.abs(), s.df)).min(1.0),
    };
    let q = student_t_quantile(0.975, s.df)?;
    Ok(PooledStat {
        mean,
        se,
        df: s.df,
        t,
        p,
        tail,
        ci_low: mean - q * se,
        ci_high: mean + q * se,
        zero_variance: s.zero_variance,
    })
}

/// Pools raw per-fold draws.
pub fn pool_draws(per_fold: &[Vec<f64>], tail: Tail) -> Result<PooledStat> {
    let folds = per_fold
        .iter()
        .map(|v| FoldStat::from_values(v))
        .collect::<Result<Vec<_>>>()?;
    pooled_test(&folds, tail)
}

/// Welch two-sample two-sided t-test of mean(a) - mean(b).
/// Returns (difference, p), or `None` when a group has fewer than 2 values.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<Option<(f64, f64)>> {
    if a.len() < 2 || b.len() < 2 {
        return Ok(None);
    }
    let fa = FoldStat::from_values(a)?;
    let fb = FoldStat::from_values(b)?;
    let s = satterthwaite_pool(&[fa, fb])?;
    let diff = fa.mean - fb.mean;
    let p = if s.se > 0.0 {
        (2.0 * student_t_sf((diff / s.se).abs(), s.df)).min(1.0)
    } else if diff == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(Some((diff, p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // 2 * scipy.stats.t.sf(2 / sqrt(0.075), 0.09 / (0.01/9 + 0.04/19))
    const P_T7303_DF2798: f64 = 5.983702746690601e-08;

    #[test]
    fn worked_two_fold_case() {
        let f = [FoldStat::new(0.0, 1.0, 10).unwrap(), FoldStat::new(0.0, 4.0, 20).unwrap()];
        let s = satterthwaite_pool(&f).unwrap();
        assert_abs_diff_eq!(s.se, 0.3f64.sqrt(), epsilon = 1e-12);
        // 0.09 / (0.01/9 + 0.04/19)
        assert_abs_diff_eq!(s.df, 0.09 / (0.01 / 9.0 + 0.04 / 19.0), epsilon = 1e-12);
        assert_abs_diff_eq!(s.df, 27.98, epsilon = 0.01);
    }

    #[test]
    fn pooled_mean_of_two_folds() {
        let f = [FoldStat::new(1.0, 1.0, 10).unwrap(), FoldStat::new(3.0, 4.0, 20).unwrap()];
        let st = pooled_test(&f, Tail::TwoSided).unwrap();
        // var(mean) = (1/10 + 4/20) / 4
        assert_abs_diff_eq!(st.mean, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(st.se, 0.075f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(st.t, 2.0 / 0.075f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(st.p, P_T7303_DF2798, epsilon = 1e-14);
    }

    #[test]
    fn single_fold_reduces_to_classical() {
        let f = FoldStat::from_values(&[1.0, 2.0, 4.0, 7.0]).unwrap();
        let s = satterthwaite_pool(&[f]).unwrap();
        assert_abs_diff_eq!(s.se, (f.variance / 4.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.df, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_folds_stay_below_total_df() {
        let f = [FoldStat::new(0.0, 1.0, 10).unwrap(); 3];
        let s = satterthwaite_pool(&f).unwrap();
        assert!(s.df <= 27.0 + 1e-12);
        assert_abs_diff_eq!(s.df, 27.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_variance_fallback() {
        let folds = vec![vec![0.0; 30]; 10];
        let st = pool_draws(&folds, Tail::Greater).unwrap();
        assert!(st.zero_variance);
        assert_eq!(st.df, 290.0);
        assert_eq!(st.t, 0.0);
        assert_eq!(st.p, 0.5);
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(welch_test(&a, &a).unwrap().unwrap(), (0.0, 1.0));
        let b = [2.0, 4.0, 5.0, 9.0];
        let (d1, p1) = welch_test(&a, &b).unwrap().unwrap();
        let (d2, p2) = welch_test(&b, &a).unwrap().unwrap();
        assert_eq!(d1, -d2);
        assert_abs_diff_eq!(p1, p2, epsilon = 1e-15);
        assert!(welch_test(&a, &[1.0]).unwrap().is_none());
    }

    #[test]
    fn n_below_two_is_rejected() {
        assert!(FoldStat::from_values(&[1.0]).is_err());
    }
}
