//! Cross-validated experiment: fit the baseline and every backend per fold,
//! pool statistics across folds, emit tables.

mod config;
mod report;
mod run;

pub use config::{CoefficientRows, DataSource, ExperimentConfig};
pub use report::{
    confidence_records, covariate_records, emit_reports, load_samplers, performance_records, read_table,
    save_samplers, ConfidenceRecordRow, ConfidenceRow, CovariateRecord, CovariateRow, ExperimentOutput,
    ExperimentReport, ModelReport, ModelStatus, PerformanceRecord, PerformanceRow, TimingRow, REPORT_FORMAT,
};
pub use run::{evaluate, evaluate_model, fit_models, prepare, run_experiment, ModelFits, Prepared, BASELINE};

use std::path::Path;

use crate::error::Result;

/// Recomputes the report of a previous run from its saved samplers and
/// rewrites every table except `timing.csv`.
pub fn reemit(dir: &Path) -> Result<ExperimentReport> {
    let old = ExperimentReport::load(&dir.join("report.json"))?;
    let prep = prepare(&old.config)?;
    let models = load_samplers(&old, dir)?;
    let (report, _) = evaluate(&old.config, &prep, &models)?;
    emit_reports(&report, None, dir)?;
    Ok(report)
}
