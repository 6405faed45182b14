use std::fs::File;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::ModelFits;
use crate::armed::{Effect, UnseenMode};
use crate::error::{Error, Result};
use crate::simdata::ClusteredDataset;
use crate::stats::{Averaging, CalibrationSummary, CovariateCoefficient, Split};
use crate::uq::{Backend, PosteriorKind, PosteriorSampler};

pub const REPORT_FORMAT: &str = "medl-uq-report";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ModelStatus {
    Completed,
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub split: Split,
    pub metric: String,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub model_fit_p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub feature: String,
    pub probe: bool,
    pub effect: Effect,
    pub averaging: Averaging,
    pub coef: f64,
    pub se: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub rank: usize,
}

impl CovariateRow {
    pub fn from_coefficient(c: &CovariateCoefficient) -> Self {
        Self {
            feature: c.feature.clone(),
            probe: c.probe,
            effect: c.effect,
            averaging: c.averaging,
            coef: c.mean,
            se: c.stat.map(|s| s.se),
            df: c.stat.map(|s| s.df),
            p: c.stat.map(|s| s.p),
            ci_low: c.stat.map(|s| s.ci_low),
            ci_high: c.stat.map(|s| s.ci_high),
            rank: c.rank,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub split: Split,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub mean_correct: Option<f64>,
    pub mean_incorrect: Option<f64>,
    pub difference: Option<f64>,
    pub p: Option<f64>,
    pub mean_confidence: Option<f64>,
}

impl ConfidenceRow {
    pub fn new(split: Split, s: &CalibrationSummary) -> Self {
        Self {
            split,
            n_correct: s.n_correct,
            n_incorrect: s.n_incorrect,
            mean_correct: s.mean_correct,
            mean_incorrect: s.mean_incorrect,
            difference: s.difference,
            p: s.p,
            mean_confidence: s.mean_confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub backend: Option<Backend>,
    pub kind: PosteriorKind,
    pub draws: usize,
    #[serde(flatten)]
    pub status: ModelStatus,
    pub performance: Vec<PerformanceRow>,
    pub covariates: Vec<CovariateRow>,
    /// Empty for single-draw models.
    pub confidence: Vec<ConfidenceRow>,
}

impl ModelReport {
    pub fn performance(&self, split: Split, metric: &str) -> Option<&PerformanceRow> {
        self.performance.iter().find(|r| r.split == split && r.metric == metric)
    }

    pub fn confidence(&self, split: Split) -> Option<&ConfidenceRow> {
        self.confidence.iter().find(|r| r.split == split)
    }

    pub fn covariates(&self, effect: Effect, averaging: Averaging) -> impl Iterator<Item = &CovariateRow> {
        self.covariates
            .iter()
            .filter(move |r| r.effect == effect && r.averaging == averaging)
    }
}

/// Everything a run produces. Timings are kept out of the JSON report so
/// the report is a pure function of the configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub software_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_seen_clusters: usize,
    pub n_clusters: usize,
    /// How unseen-site membership was supplied.
    pub unseen_membership: UnseenMode,
    /// How per-fold votes of one subject were combined.
    pub confidence_pooling: String,
    pub models: Vec<ModelReport>,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig, data: &ClusteredDataset, models: Vec<ModelReport>) -> Result<Self> {
        Ok(Self {
            format: REPORT_FORMAT.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash()?,
            seed: cfg.seed()?,
            config: cfg.clone(),
            n_samples: data.len(),
            n_features: data.n_features(),
            n_seen_clusters: data.n_seen,
            n_clusters: data.n_clusters(),
            unseen_membership: cfg.unseen_mode,
            confidence_pooling: "vote-sum".into(),
            models,
        })
    }

    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Data(format!("not a report file: format {:?}", r.format)));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    pub train_seconds: f64,
    pub inference_seconds: f64,
}

/// Result of [`run_experiment`](super::run_experiment).
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub timing: Vec<TimingRow>,
    pub models: Vec<ModelFits>,
}

impl ExperimentOutput {
    pub fn timing(&self, model: &str) -> Option<&TimingRow> {
        self.timing.iter().find(|t| t.model == model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub model: String,
    pub split: Split,
    pub metric: String,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub model_fit_p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateRecord {
    pub model: String,
    pub feature: String,
    pub probe: bool,
    pub effect: Effect,
    pub averaging: Averaging,
    pub coef: f64,
    pub se: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecordRow {
    pub model: String,
    pub split: Split,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub mean_correct: Option<f64>,
    pub mean_incorrect: Option<f64>,
    pub difference: Option<f64>,
    pub p: Option<f64>,
    pub mean_confidence: Option<f64>,
}

const PERFORMANCE_HEADER: &[&str] = &["model", "split", "metric", "mean", "ci_low", "ci_high", "model_fit_p"];
const COVARIATE_HEADER: &[&str] = &[
    "model", "feature", "probe", "effect", "averaging", "coef", "se", "df", "p", "ci_low", "ci_high", "rank",
];
const CONFIDENCE_HEADER: &[&str] = &[
    "model",
    "split",
    "n_correct",
    "n_incorrect",
    "mean_correct",
    "mean_incorrect",
    "difference",
    "p",
    "mean_confidence",
];
const TIMING_HEADER: &[&str] = &["model", "train_seconds", "inference_seconds"];

pub fn performance_records(r: &ExperimentReport) -> Vec<PerformanceRecord> {
    r.models
        .iter()
        .flat_map(|m| {
            m.performance.iter().map(|p| PerformanceRecord {
                model: m.name.clone(),
                split: p.split,
                metric: p.metric.clone(),
                mean: p.mean,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                model_fit_p: p.model_fit_p,
            })
        })
        .collect()
}

pub fn covariate_records(r: &ExperimentReport) -> Vec<CovariateRecord> {
    r.models
        .iter()
        .flat_map(|m| {
            m.covariates.iter().map(|c| CovariateRecord {
                model: m.name.clone(),
                feature: c.feature.clone(),
                probe: c.probe,
                effect: c.effect,
                averaging: c.averaging,
                coef: c.coef,
                se: c.se,
                df: c.df,
                p: c.p,
                ci_low: c.ci_low,
                ci_high: c.ci_high,
                rank: c.rank,
            })
        })
        .collect()
}

pub fn confidence_records(r: &ExperimentReport) -> Vec<ConfidenceRecordRow> {
    r.models
        .iter()
        .flat_map(|m| {
            m.confidence.iter().map(|c| ConfidenceRecordRow {
                model: m.name.clone(),
                split: c.split,
                n_correct: c.n_correct,
                n_incorrect: c.n_incorrect,
                mean_correct: c.mean_correct,
                mean_incorrect: c.mean_incorrect,
                difference: c.difference,
                p: c.p,
                mean_confidence: c.mean_confidence,
            })
        })
        .collect()
}

fn write_table<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = ::csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads back one of the emitted CSV tables.
pub fn read_table<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = ::csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes the four CSV tables and `report.json` into `dir`.
pub fn emit_reports(report: &ExperimentReport, timing: Option<&[TimingRow]>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_table(&dir.join("performance.csv"), PERFORMANCE_HEADER, &performance_records(report))?;
    write_table(&dir.join("covariates.csv"), COVARIATE_HEADER, &covariate_records(report))?;
    write_table(&dir.join("confidence.csv"), CONFIDENCE_HEADER, &confidence_records(report))?;
    if let Some(t) = timing {
        write_table(&dir.join("timing.csv"), TIMING_HEADER, t)?;
    }
    let path = dir.join("report.json");
    std::fs::write(&path, report.to_json()? + "\n").map_err(|e| Error::io(path, e))
}

fn model_dir(dir: &Path, name: &str) -> PathBuf {
    let slug: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    dir.join("samplers").join(slug)
}

/// Saves every fold sampler of every completed model under `dir/samplers`.
pub fn save_samplers(models: &[ModelFits], dir: &Path) -> Result<()> {
    for m in models {
        let d = model_dir(dir, &m.name);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for (f, s) in m.samplers.iter().enumerate() {
            s.save(&d.join(format!("fold-{f:02}.json")))?;
        }
    }
    Ok(())
}

/// Loads the samplers written by [`save_samplers`] for the models of `report`.
pub fn load_samplers(report: &ExperimentReport, dir: &Path) -> Result<Vec<ModelFits>> {
    report
        .models
        .iter()
        .map(|m| {
            let mut fits = ModelFits {
                name: m.name.clone(),
                backend: m.backend,
                samplers: Vec::new(),
                failure: None,
                train_seconds: 0.0,
            };
            match &m.status {
                ModelStatus::Failed { message } => fits.failure = Some(message.clone()),
                ModelStatus::Completed => {
                    let d = model_dir(dir, &m.name);
                    for f in 0..report.config.folds {
                        fits.samplers.push(PosteriorSampler::load(&d.join(format!("fold-{f:02}.json")))?);
                    }
                }
            }
            Ok(fits)
        })
        .collect()
}
