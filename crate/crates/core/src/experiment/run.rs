use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::config::{CoefficientRows, ExperimentConfig};
use super::report::{
    ConfidenceRow, CovariateRow, ExperimentOutput, ExperimentReport, ModelReport, ModelStatus,
    PerformanceRow, TimingRow,
};
use crate::armed::{train_armed, train_zpredictor, ArmedLayout, ArmedParams, ArmedSpec, Samples, TrainConfig, ZpredConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream};
use crate::simdata::{plan_folds, ClusteredDataset, FoldPlan};
use crate::stats::{
    balanced_accuracy, calibration_compare, covariate_coefficients, model_fit_test, pool_draws,
    pool_unseen_confidence, prediction_confidence, Averaging, ConfidenceRecord, FoldEvaluation,
    MetricSet, Split, Tail, Votes,
};
use crate::uq::{fit, posterior_predict, Backend, FitContext, Membership, PosteriorKind, PosteriorSampler};

/// Name of the non-UQ model in reports.
pub const BASELINE: &str = "armed";

/// The fitted samplers of one model over all folds.
#[derive(Clone, Debug)]
pub struct ModelFits {
    pub name: String,
    pub backend: Option<Backend>,
    pub samplers: Vec<PosteriorSampler<f64>>,
    pub failure: Option<String>,
    pub train_seconds: f64,
}

impl ModelFits {
    fn new(name: String, backend: Option<Backend>) -> Self {
        Self {
            name,
            backend,
            samplers: Vec::new(),
            failure: None,
            train_seconds: 0.0,
        }
    }

    pub fn kind(&self) -> PosteriorKind {
        self.backend.map_or(PosteriorKind::Point, |b| b.kind())
    }
}

/// Per-fold fit results: zpred seconds, then (sampler or error, seconds) per model.
type FoldFit = (f64, Vec<(std::result::Result<PosteriorSampler<f64>, String>, f64)>);

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

/// Keeps numeric failures as model-level failures; anything else aborts.
fn isolate(r: Result<PosteriorSampler<f64>>) -> Result<std::result::Result<PosteriorSampler<f64>, String>> {
    match r {
        Ok(s) => Ok(Ok(s)),
        Err(e) if e.is_numeric() => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn fit_fold(
    cfg: &ExperimentConfig,
    data: &ClusteredDataset,
    x: &Matrix<f64>,
    layout: &Arc<ArmedLayout>,
    rows: &[usize],
    f: usize,
) -> Result<FoldFit> {
    let seed = cfg.seed()?;
    let fold = f as u64;
    let samples = Samples {
        x,
        y: &data.y,
        cluster: &data.cluster,
        rows,
    };
    let init = ArmedParams::init(layout.clone(), &mut stream(seed, "init", fold));
    let zcfg = ZpredConfig {
        seed: derive_seed(seed, "zpred", fold),
        ..cfg.zpred.clone()
    };
    let (init, zpred_seconds) = timed(|| train_zpredictor(samples, &init, &zcfg));
    let init = init?;

    let mut out = Vec::with_capacity(cfg.backends.len() + 1);
    let base_cfg = TrainConfig {
        seed: derive_seed(seed, BASELINE, fold),
        ..cfg.train.clone()
    };
    let (base, secs) = timed(|| train_armed(samples, &init, &base_cfg).map(|(p, _)| PosteriorSampler::point(p)));
    let base = isolate(base)?;
    let converged = base.as_ref().ok().map(|s| s.center().clone());
    out.push((base, secs));

    for b in &cfg.backends {
        let name = b.to_string();
        let train = TrainConfig {
            seed: derive_seed(seed, &name, fold),
            ..cfg.train.clone()
        };
        let mut ctx = FitContext::new(samples, &init, &train, derive_seed(seed, &name, fold));
        ctx.converged = converged.as_ref();
        ctx.draws = cfg.draws;
        ctx.swag_epochs = cfg.swag_epochs;
        ctx.dropout_extends_to_zpred = cfg.dropout_extends_to_zpred;
        ctx.parallel = cfg.parallel;
        let (r, secs) = timed(|| fit(b, &ctx));
        let r = isolate(r)?;
        if let Err(m) = &r {
            warn!("fold {f}: {name} failed: {m}");
        }
        out.push((r, secs));
    }
    info!("fold {f} fitted");
    Ok((zpred_seconds, out))
}

/// Shape and fold plan of a prepared experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: ClusteredDataset,
    pub plan: FoldPlan,
    pub x: Matrix<f64>,
    pub layout: Arc<ArmedLayout>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let data = cfg.data.load()?;
    data.validate()?;
    if data.n_seen < 2 {
        return Err(Error::Data("need at least 2 seen clusters".into()));
    }
    let plan = plan_folds(&data, cfg.folds, derive_seed(cfg.seed()?, "folds", 0))?;
    let x = data.x_rows::<f64>(&(0..data.len()).collect::<Vec<_>>());
    let layout = Arc::new(ArmedLayout::new(ArmedSpec::new(data.n_features(), data.n_seen))?);
    Ok(Prepared { data, plan, x, layout })
}

/// Fits the baseline and every configured backend on every fold.
pub fn fit_models(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(Vec<ModelFits>, f64)> {
    let fold_fits: Vec<FoldFit> = if cfg.parallel {
        (0..cfg.folds)
            .into_par_iter()
            .map(|f| fit_fold(cfg, &prep.data, &prep.x, &prep.layout, &prep.plan.folds[f].train, f))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.folds)
            .map(|f| fit_fold(cfg, &prep.data, &prep.x, &prep.layout, &prep.plan.folds[f].train, f))
            .collect::<Result<_>>()?
    };
    let mut models: Vec<ModelFits> = std::iter::once(ModelFits::new(BASELINE.into(), None))
        .chain(cfg.backends.iter().map(|b| ModelFits::new(b.to_string(), Some(*b))))
        .collect();
    let mut zpred_seconds = 0.0;
    for (f, (zs, fits)) in fold_fits.into_iter().enumerate() {
        zpred_seconds += zs;
        for (m, (r, secs)) in models.iter_mut().zip(fits) {
            m.train_seconds += secs;
            match r {
                Ok(s) => m.samplers.push(s),
                Err(msg) => {
                    if m.failure.is_none() {
                        m.failure = Some(format!("fold {f}: {msg}"));
                    }
                }
            }
        }
    }
    for m in &mut models {
        if m.failure.is_some() {
            m.samplers.clear();
        }
    }
    Ok((models, zpred_seconds))
}

struct SplitRows<'a> {
    split: Split,
    rows: &'a [usize],
}

fn fold_splits<'a>(prep: &'a Prepared, f: usize) -> [SplitRows<'a>; 3] {
    let fold = &prep.plan.folds[f];
    [
        SplitRows { split: Split::Train, rows: &fold.train },
        SplitRows { split: Split::SeenTest, rows: &fold.test },
        SplitRows { split: Split::UnseenTest, rows: &prep.plan.unseen },
    ]
}

/// Draws x rows of one split, one row per draw.
fn predict_split(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    sampler: &PosteriorSampler<f64>,
    s: &SplitRows<'_>,
) -> Result<Matrix<f64>> {
    let x = prep.x.select_rows(s.rows);
    let clusters: Vec<usize>;
    let membership = match s.split {
        Split::UnseenTest => Membership::Unseen(cfg.unseen_mode),
        _ => {
            clusters = s.rows.iter().map(|&i| prep.data.cluster[i]).collect();
            Membership::Known(&clusters)
        }
    };
    Ok(posterior_predict(sampler, &x, membership)?.y_m)
}

/// Computes every statistic of one fitted model; returns the report and the
/// total inference seconds.
pub fn evaluate_model(cfg: &ExperimentConfig, prep: &Prepared, model: &ModelFits) -> Result<(ModelReport, f64)> {
    let draws = model.samplers.first().map_or(0, |s| s.draws);
    let mut report = ModelReport {
        name: model.name.clone(),
        backend: model.backend,
        kind: model.kind(),
        draws,
        status: match &model.failure {
            Some(m) => ModelStatus::Failed { message: m.clone() },
            None => ModelStatus::Completed,
        },
        performance: Vec::new(),
        covariates: Vec::new(),
        confidence: Vec::new(),
    };
    if model.failure.is_some() || model.samplers.is_empty() {
        return Ok((report, 0.0));
    }
    let k = model.samplers.len();
    let n = prep.data.len();
    let uq = draws >= 2;

    // metrics[split][metric][fold][draw], bacc[split][fold][draw]
    let mut metrics = vec![vec![vec![Vec::new(); k]; MetricSet::NAMES.len()]; 3];
    let mut bacc = vec![vec![Vec::new(); k]; 3];
    // votes[split][sample] accumulated over folds
    let mut votes = vec![vec![Vec::<Votes>::new(); n]; 3];
    let mut inference = 0.0;
    for (f, sampler) in model.samplers.iter().enumerate() {
        for (si, s) in fold_splits(prep, f).iter().enumerate() {
            let (y_m, secs) = timed(|| predict_split(cfg, prep, sampler, s));
            let y_m = y_m?;
            inference += secs;
            let labels: Vec<u8> = s.rows.iter().map(|&i| prep.data.y[i]).collect();
            for d in 0..y_m.rows() {
                let scores = y_m.row(d);
                let m = MetricSet::compute(scores, &labels).map_err(|e| {
                    Error::Data(format!("fold {f}, {}: {e}", s.split.name()))
                })?;
                for (j, v) in m.values().into_iter().enumerate() {
                    metrics[si][j][f].push(v);
                }
                bacc[si][f].push(balanced_accuracy(scores, &labels)?);
            }
            for (c, &i) in s.rows.iter().enumerate() {
                votes[si][i].push(Votes::from_probs((0..y_m.rows()).map(|d| y_m.get(d, c))));
            }
        }
    }

    for (si, split) in Split::ALL.iter().enumerate() {
        let fit_p = if uq { Some(model_fit_test(&bacc[si])?) } else { None };
        for (j, name) in MetricSet::NAMES.iter().enumerate() {
            let vals = &metrics[si][j];
            let mean = vals.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).sum::<f64>() / k as f64;
            let pooled = if uq { Some(pool_draws(vals, Tail::TwoSided)?) } else { None };
            report.performance.push(PerformanceRow {
                split: *split,
                metric: name.to_string(),
                mean,
                ci_low: pooled.map(|p| p.ci_low),
                ci_high: pooled.map(|p| p.ci_high),
                model_fit_p: fit_p.map(|f| f.stat.p),
            });
        }
    }

    let coef_x: Vec<Matrix<f64>>;
    let coef_z: Vec<Matrix<f64>>;
    {
        let rows = |f: usize| match cfg.coefficient_rows {
            CoefficientRows::Train => &prep.plan.folds[f].train,
            CoefficientRows::SeenTest => &prep.plan.folds[f].test,
        };
        coef_x = (0..k).map(|f| prep.x.select_rows(rows(f))).collect();
        coef_z = (0..k).map(|f| prep.data.z_seen(rows(f))).collect::<Result<_>>()?;
    }
    let evals: Vec<FoldEvaluation<'_, f64>> = (0..k)
        .map(|f| FoldEvaluation {
            sampler: &model.samplers[f],
            x: &coef_x[f],
            z: Some(&coef_z[f]),
        })
        .collect();
    let names = prep.data.feature_names();
    let probes: Vec<bool> = {
        let cols = prep.data.probe_columns();
        (0..prep.data.n_features()).map(|j| cols.contains(&j)).collect()
    };
    for &effect in &cfg.effects {
        for averaging in Averaging::ALL {
            for c in covariate_coefficients(&evals, &names, &probes, effect, averaging)? {
                report.covariates.push(CovariateRow::from_coefficient(&c));
            }
        }
    }

    if uq {
        for (si, split) in Split::ALL.iter().enumerate() {
            let mut records = Vec::new();
            for (i, v) in votes[si].iter().enumerate() {
                if v.is_empty() {
                    continue;
                }
                let c = if v.len() == 1 {
                    prediction_confidence(v[0])?
                } else {
                    pool_unseen_confidence(v)?
                };
                records.push(ConfidenceRecord::new(i, c, prep.data.y[i], *split));
            }
            report
                .confidence
                .push(ConfidenceRow::new(*split, &calibration_compare(&records)?));
        }
    }
    Ok((report, inference))
}

/// Builds the report of already fitted models.
pub fn evaluate(cfg: &ExperimentConfig, prep: &Prepared, models: &[ModelFits]) -> Result<(ExperimentReport, Vec<f64>)> {
    let mut reports = Vec::with_capacity(models.len());
    let mut inference = Vec::with_capacity(models.len());
    for m in models {
        let (r, secs) = evaluate_model(cfg, prep, m)?;
        reports.push(r);
        inference.push(secs);
    }
    Ok((ExperimentReport::new(cfg, &prep.data, reports)?, inference))
}

/// Runs the full pipeline: data, folds, fits, statistics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let prep = prepare(cfg)?;
    info!(
        "{} samples, {} features, {} seen / {} clusters, {} folds",
        prep.data.len(),
        prep.data.n_features(),
        prep.data.n_seen,
        prep.data.n_clusters(),
        cfg.folds
    );
    let (models, zpred_seconds) = fit_models(cfg, &prep)?;
    let (report, inference) = evaluate(cfg, &prep, &models)?;
    let mut timing: Vec<TimingRow> = models
        .iter()
        .zip(&inference)
        .map(|(m, &inf)| TimingRow {
            model: m.name.clone(),
            train_seconds: m.train_seconds,
            inference_seconds: inf,
        })
        .collect();
    timing.push(TimingRow {
        model: "z-predictor".into(),
        train_seconds: zpred_seconds,
        inference_seconds: 0.0,
    });
    Ok(ExperimentOutput { report, timing, models })
}
