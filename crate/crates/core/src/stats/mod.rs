//! Metrics, significance tests, covariate coefficients and confidence.

mod coefficients;
mod confidence;
mod dist;
mod metrics;
mod pooling;

pub use coefficients::{
    covariate_coefficients, draw_coefficients, effect_name, rank_by_magnitude, Averaging,
    CovariateCoefficient, FoldEvaluation,
};
pub use confidence::{
    calibration_compare, pool_unseen_confidence, prediction_confidence, CalibrationSummary,
    Confidence, ConfidenceRecord, Split, Votes,
};
pub use dist::{inc_beta, ln_gamma, logit, student_t_cdf, student_t_quantile, student_t_sf, LOGIT_EPS};
pub use metrics::{
    auroc, balanced_accuracy, rates_above, sens_at_spec, youden_operating_point, MetricSet,
    OperatingPoint,
};
pub use pooling::{
    pool_draws, pooled_test, satterthwaite_pool, welch_test, FoldStat, PooledStat, Satterthwaite, Tail,
};

use crate::error::Result;

/// Outcome of the model-fit test.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelFit {
    pub stat: PooledStat,
    /// Number of draws whose accuracy was clamped before the logit.
    pub clamped: usize,
}

/// One-sided test that logit balanced accuracy exceeds chance, from the
/// per-draw balanced accuracies of every fold.
pub fn model_fit_test(per_fold: &[Vec<f64>]) -> Result<ModelFit> {
    let mut clamped = 0;
    let logits: Vec<Vec<f64>> = per_fold
        .iter()
        .map(|fold| {
            fold.iter()
                .map(|&b| {
                    let (v, c) = logit(b);
                    clamped += usize::from(c);
                    v
                })
                .collect()
        })
        .collect();
    Ok(ModelFit {
        stat: pool_draws(&logits, Tail::Greater)?,
        clamped,
    })
}
