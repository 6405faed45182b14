use medl_uq::armed::TrainConfig;
use medl_uq::experiment::{
    covariate_records, emit_reports, performance_records, read_table, reemit, run_experiment, save_samplers,
    CovariateRecord, DataSource, ExperimentConfig, ExperimentReport, ModelStatus, PerformanceRecord, BASELINE,
};
use medl_uq::simdata::GeneratorConfig;
use medl_uq::stats::Split;
use medl_uq::uq::Backend;

fn tiny(backends: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        seed: Some(9),
        data: DataSource::Generate {
            generator: GeneratorConfig {
                n_clusters: 8,
                n_seen: 6,
                min_cluster_size: 12,
                max_cluster_size: 16,
                d_bio: 4,
                k_informative: 2,
                seed: 9,
                ..GeneratorConfig::default()
            },
        },
        folds: 3,
        draws: 4,
        swag_epochs: 3,
        train: TrainConfig { epochs: 4, ..TrainConfig::default() },
        backends: backends.iter().map(|b| b.parse().unwrap()).collect(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn identical_configs_give_byte_identical_reports() {
    let cfg = tiny(&["swag-diag:0.01", "dropout:0.1", "ensemble-subsample:0.8"]);
    let a = run_experiment(&cfg).unwrap().report.to_json().unwrap();
    let b = run_experiment(&cfg).unwrap().report.to_json().unwrap();
    assert_eq!(a, b);
    let par = ExperimentConfig { parallel: true, ..cfg };
    let c = run_experiment(&par).unwrap().report;
    let mut c_cfg = c.clone();
    c_cfg.config.parallel = false;
    c_cfg.config_hash = ExperimentReport::from_json(&a).unwrap().config_hash;
    assert_eq!(c_cfg.to_json().unwrap(), a);
}

#[test]
fn baseline_alone_has_no_significance_values() {
    let out = run_experiment(&tiny(&[])).unwrap();
    assert_eq!(out.report.models.len(), 1);
    let m = out.report.model(BASELINE).unwrap();
    assert_eq!(m.draws, 1);
    assert!(m.performance.iter().all(|r| r.model_fit_p.is_none() && r.ci_low.is_none()));
    assert!(m.covariates.iter().all(|r| r.p.is_none() && r.se.is_none()));
    assert!(m.confidence.is_empty());
}

#[test]
fn a_report_without_models_still_emits_every_table() {
    let out = run_experiment(&tiny(&[])).unwrap();
    let mut report = out.report;
    report.models.clear();
    let dir = tempfile::tempdir().unwrap();
    emit_reports(&report, Some(&[]), dir.path()).unwrap();
    for (name, header) in [
        ("performance.csv", "model,split,metric,mean,ci_low,ci_high,model_fit_p"),
        ("covariates.csv", "model,feature,probe,effect,averaging,coef,se,df,p,ci_low,ci_high,rank"),
        (
            "confidence.csv",
            "model,split,n_correct,n_incorrect,mean_correct,mean_incorrect,difference,p,mean_confidence",
        ),
        ("timing.csv", "model,train_seconds,inference_seconds"),
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.trim_end(), header, "{name}");
    }
    let back = ExperimentReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);
}

#[test]
fn tables_and_json_round_trip() {
    let out = run_experiment(&tiny(&["bnn:last", "ensemble-init"])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_reports(&out.report, Some(&out.timing), dir.path()).unwrap();
    let back = ExperimentReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, out.report);
    let perf: Vec<PerformanceRecord> = read_table(&dir.path().join("performance.csv")).unwrap();
    assert_eq!(perf, performance_records(&out.report));
    let cov: Vec<CovariateRecord> = read_table(&dir.path().join("covariates.csv")).unwrap();
    assert_eq!(cov, covariate_records(&out.report));
    // 3 models x 3 splits x 6 metrics
    assert_eq!(perf.len(), 54);
    assert!(perf.iter().any(|r| r.split == Split::UnseenTest && r.model == "bnn:last"));
}

#[test]
fn a_diverging_backend_fails_alone() {
    let cfg = ExperimentConfig {
        allow_custom: true,
        ..tiny(&["swag-diag:1e30", "dropout:0.3"])
    };
    cfg.validate().unwrap();
    let out = run_experiment(&cfg).unwrap();
    let bad = out.report.model(&cfg.backends[0].to_string()).unwrap();
    assert!(matches!(bad.status, ModelStatus::Failed { .. }), "{:?}", bad.status);
    assert!(bad.performance.is_empty() && bad.covariates.is_empty());
    for name in [BASELINE, "dropout:0.3"] {
        let m = out.report.model(name).unwrap();
        assert_eq!(m.status, ModelStatus::Completed);
        assert!(m.performance.iter().all(|r| r.mean.is_finite()));
    }
    let strict = ExperimentConfig { allow_custom: false, ..cfg };
    assert!(strict.validate().is_err());
}

#[test]
fn reemit_reproduces_the_report_from_saved_samplers() {
    let cfg = tiny(&["swag-full:0.01", "dropout:0.5"]);
    let out = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_reports(&out.report, Some(&out.timing), dir.path()).unwrap();
    save_samplers(&out.models, dir.path()).unwrap();
    let before = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let timing = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    let again = reemit(dir.path()).unwrap();
    assert_eq!(again, out.report);
    assert_eq!(std::fs::read_to_string(dir.path().join("report.json")).unwrap(), before);
    assert_eq!(std::fs::read_to_string(dir.path().join("timing.csv")).unwrap(), timing);
}

#[test]
fn every_grid_backend_round_trips_through_its_name() {
    let grid = Backend::grid();
    assert_eq!(grid.len(), 20);
    for b in grid {
        let parsed: Backend = b.to_string().parse().unwrap();
        assert_eq!(parsed, b);
        parsed.check_grid().unwrap();
    }
}
