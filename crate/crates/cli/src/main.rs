use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use medl_uq::error::Error;
use medl_uq::experiment::{
    emit_reports, reemit, run_experiment, save_samplers, DataSource, ExperimentConfig, ModelStatus,
};
use medl_uq::simdata::{generate, write_csv, GeneratorConfig};
use medl_uq::uq::Backend;

#[derive(Parser, Debug)]
#[command(name = "medl-uq", version, about = "Mixed-effects deep learning with epistemic UQ")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic clustered dataset to CSV.
    Generate {
        /// Experiment config; only its generator section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full cross-validated experiment.
    Run(RunArgs),
    /// Recompute the tables of a previous run from its saved samplers.
    Report {
        /// Directory of a previous `run`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Backend such as `ensemble-subsample:0.9`; repeat to run several.
    #[arg(long = "backend")]
    backends: Vec<String>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Fit folds in parallel. Timings are then not comparable.
    #[arg(long)]
    parallel: bool,
    /// Accept backend hyperparameters outside the standard grid.
    #[arg(long)]
    allow_custom: bool,
}

const NUMERIC_FAILURE: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Numeric { .. } | Error::Training { .. } => NUMERIC_FAILURE,
        _ => 3,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        // an unreadable config file is a configuration problem
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        }),
        None => Ok(ExperimentConfig::default()),
    }
}

fn cmd_generate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let mut generator = match cfg.data {
        DataSource::Generate { generator } => generator,
        DataSource::Csv { .. } => {
            return Err(Error::Config("the config's data source is a CSV file, not a generator".into()))
        }
    };
    if let Some(s) = seed {
        generator.seed = s;
    }
    write_dataset(&generator, out)
}

fn write_dataset(generator: &GeneratorConfig, out: &Path) -> Result<(), Error> {
    let data = generate(generator)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    write_csv(&data, out)?;
    info!("wrote {} rows, {} features to {}", data.len(), data.n_features(), out.display());
    Ok(())
}

/// Returns the number of models that failed; their reports are still written.
fn cmd_run(args: &RunArgs) -> Result<usize, Error> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if !args.backends.is_empty() {
        cfg.backends = args
            .backends
            .iter()
            .map(|b| b.parse::<Backend>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(d) = args.draws {
        cfg.draws = d;
    }
    if let Some(k) = args.folds {
        cfg.folds = k;
    }
    cfg.parallel |= args.parallel;
    cfg.allow_custom |= args.allow_custom;
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("an output directory is required (config `out` or --out)".into()))?;

    let output = run_experiment(&cfg)?;
    emit_reports(&output.report, Some(&output.timing), &out)?;
    save_samplers(&output.models, &out)?;
    let mut failed = 0;
    for m in &output.report.models {
        if let ModelStatus::Failed { message: msg } = &m.status {
            error!("{} failed: {msg}", m.name);
            failed += 1;
        }
    }
    info!("wrote reports for {} models to {}", output.report.models.len(), out.display());
    Ok(failed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Generate { config, seed, out } => cmd_generate(config.as_deref(), *seed, out).map(|()| 0),
        Command::Run(args) => cmd_run(args),
        Command::Report { out } => reemit(out).map(|r| {
            info!("re-emitted {} models", r.models.len());
            0
        }),
    };
    match res {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(NUMERIC_FAILURE),
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
