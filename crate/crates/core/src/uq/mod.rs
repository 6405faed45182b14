//! Epistemic uncertainty backends sharing one posterior-sampling contract.

mod bnn;
mod ensemble;
mod swag;

pub use bnn::{kl_standard_normal, BnnModel, BnnPosterior, LayerSelection, SIGMA_FLOOR, SIGMA_INIT};
pub use ensemble::{stratified_subsample, subsample_size, EnsemblePosterior, Perturbation, SUBSAMPLE_FRACTIONS};
pub use swag::{SwagPosterior, SwagVariant, SWAG_EPOCHS, SWAG_LRS};

use std::borrow::Cow;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::armed::{
    mixed_forward_masked, predict_unseen, run_training, train_armed, ArmedParams, Masks,
    PointModel, Samples, Segment, TrainConfig, UnseenMode,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::DropoutMask;
use crate::rng;
use crate::scalar::Scalar;

/// Default number of posterior draws.
pub const DEFAULT_DRAWS: usize = 30;

/// Dropout rates admitted by the default grid.
pub const DROPOUT_RATES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

const GRID_TOL: f64 = 1e-12;

/// A UQ backend together with its hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Backend {
    Bnn(LayerSelection),
    Swag { variant: SwagVariant, lr: f64 },
    Dropout { rate: f64 },
    Ensemble(Perturbation),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorKind {
    /// A single deterministic model.
    Point,
    BnnVi,
    SwagDiag,
    SwagFull,
    McDropout,
    EnsembleInit,
    EnsembleSubsample,
}

impl Backend {
    pub fn kind(&self) -> PosteriorKind {
        match self {
            Backend::Bnn(_) => PosteriorKind::BnnVi,
            Backend::Swag { variant: SwagVariant::Diag, .. } => PosteriorKind::SwagDiag,
            Backend::Swag { variant: SwagVariant::Full, .. } => PosteriorKind::SwagFull,
            Backend::Dropout { .. } => PosteriorKind::McDropout,
            Backend::Ensemble(Perturbation::RandomInit) => PosteriorKind::EnsembleInit,
            Backend::Ensemble(Perturbation::Subsample { .. }) => PosteriorKind::EnsembleSubsample,
        }
    }

    /// Every backend and hyperparameter of the default grid.
    pub fn grid() -> Vec<Backend> {
        let mut v: Vec<Backend> = LayerSelection::ALL.into_iter().map(Backend::Bnn).collect();
        for variant in [SwagVariant::Diag, SwagVariant::Full] {
            v.extend(SWAG_LRS.iter().map(|&lr| Backend::Swag { variant, lr }));
        }
        v.extend(DROPOUT_RATES.iter().map(|&rate| Backend::Dropout { rate }));
        v.push(Backend::Ensemble(Perturbation::RandomInit));
        v.extend(
            SUBSAMPLE_FRACTIONS
                .iter()
                .map(|&fraction| Backend::Ensemble(Perturbation::Subsample { fraction })),
        );
        v
    }

    /// Rejects hyperparameters outside the default grid.
    pub fn check_grid(&self) -> Result<()> {
        let within = |v: f64, set: &[f64]| set.iter().any(|s| (s - v).abs() < GRID_TOL);
        let ok = match *self {
            Backend::Bnn(_) | Backend::Ensemble(Perturbation::RandomInit) => true,
            Backend::Swag { lr, .. } => within(lr, &SWAG_LRS),
            Backend::Dropout { rate } => within(rate, &DROPOUT_RATES),
            Backend::Ensemble(Perturbation::Subsample { fraction }) => within(fraction, &SUBSAMPLE_FRACTIONS),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "backend `{self}` is outside the tested grid (use --allow-custom)"
            )))
        }
    }

    /// Rejects hyperparameters no backend can use.
    pub fn check_domain(&self) -> Result<()> {
        let bad = match *self {
            Backend::Swag { lr, .. } => !(lr.is_finite() && lr > 0.0),
            Backend::Dropout { rate } => !(0.0..1.0).contains(&rate),
            Backend::Ensemble(Perturbation::Subsample { fraction }) => !(fraction > 0.0 && fraction <= 1.0),
            _ => false,
        };
        if bad {
            let msg = format!("invalid hyperparameter in backend `{self}`");
            return Err(match self {
                Backend::Dropout { .. } => Error::Argument(msg),
                _ => Error::Config(msg),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Bnn(sel) => write!(f, "bnn:{}", sel.name()),
            Backend::Swag { variant: SwagVariant::Diag, lr } => write!(f, "swag-diag:{lr}"),
            Backend::Swag { variant: SwagVariant::Full, lr } => write!(f, "swag-full:{lr}"),
            Backend::Dropout { rate } => write!(f, "dropout:{rate}"),
            Backend::Ensemble(Perturbation::RandomInit) => write!(f, "ensemble-init"),
            Backend::Ensemble(Perturbation::Subsample { fraction }) => {
                write!(f, "ensemble-subsample:{fraction}")
            }
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |what: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::Config(format!("backend `{name}` needs a {what}")))?;
            a.parse::<f64>()
                .map_err(|_| Error::Config(format!("backend `{name}`: `{a}` is not a number")))
        };
        let b = match name {
            "bnn" => Backend::Bnn(LayerSelection::parse(
                arg.ok_or_else(|| Error::Config("backend `bnn` needs first, last or all".into()))?,
            )?),
            "swag-diag" => Backend::Swag { variant: SwagVariant::Diag, lr: num("learning rate")? },
            "swag-full" => Backend::Swag { variant: SwagVariant::Full, lr: num("learning rate")? },
            "dropout" => Backend::Dropout { rate: num("rate")? },
            "ensemble-init" if arg.is_none() => Backend::Ensemble(Perturbation::RandomInit),
            "ensemble-subsample" => Backend::Ensemble(Perturbation::Subsample { fraction: num("fraction")? }),
            _ => return Err(Error::Config(format!("unknown backend `{s}`"))),
        };
        b.check_domain()?;
        Ok(b)
    }
}

impl TryFrom<String> for Backend {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Backend> for String {
    fn from(b: Backend) -> String {
        b.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "kebab-case", tag = "type")]
pub enum SamplerState<T> {
    Point { params: ArmedParams<T> },
    Bnn(BnnPosterior<T>),
    Swag(SwagPosterior<T>),
    Dropout { params: ArmedParams<T>, rate: f64, extend_to_zpred: bool },
    Ensemble(EnsemblePosterior<T>),
}

/// A fitted weight posterior that yields `draws` reproducible samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PosteriorSampler<T> {
    pub kind: PosteriorKind,
    pub draws: usize,
    pub seed: u64,
    pub state: SamplerState<T>,
}

/// One posterior draw: weights and, for MC dropout, the masks.
#[derive(Clone, Debug)]
pub struct Draw<'a, T: Clone> {
    pub params: Cow<'a, ArmedParams<T>>,
    pub fe_mask: Option<DropoutMask>,
    pub zpred_mask: Option<DropoutMask>,
}

impl<T: Scalar> Draw<'_, T> {
    pub fn masks(&self) -> Masks<'_> {
        Masks {
            fe: self.fe_mask.as_ref(),
            zpred: self.zpred_mask.as_ref(),
        }
    }
}

const FILE_FORMAT: &str = "medl-uq-sampler";
const FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct SamplerFile<T> {
    format: String,
    version: u32,
    sampler: PosteriorSampler<T>,
}

impl<T: Scalar> PosteriorSampler<T> {
    pub fn point(params: ArmedParams<T>) -> Self {
        Self {
            kind: PosteriorKind::Point,
            draws: 1,
            seed: 0,
            state: SamplerState::Point { params },
        }
    }

    /// Representative weights: the point estimate, posterior mean or first member.
    pub fn center(&self) -> &ArmedParams<T> {
        match &self.state {
            SamplerState::Point { params } | SamplerState::Dropout { params, .. } => params,
            SamplerState::Bnn(b) => &b.mu,
            SamplerState::Swag(s) => &s.mean,
            SamplerState::Ensemble(e) => &e.members[0],
        }
    }

    /// Draw `i`, a pure function of the sampler and `i`.
    pub fn draw(&self, i: usize) -> Result<Draw<'_, T>> {
        if i >= self.draws {
            return Err(Error::Argument(format!("draw {i} requested from {} draws", self.draws)));
        }
        fn plain<T: Scalar>(params: Cow<'_, ArmedParams<T>>) -> Draw<'_, T> {
            Draw {
                params,
                fe_mask: None,
                zpred_mask: None,
            }
        }
        Ok(match &self.state {
            SamplerState::Point { params } => plain(Cow::Borrowed(params)),
            SamplerState::Bnn(b) => plain(Cow::Owned(b.sample(self.seed, i as u64))),
            SamplerState::Swag(s) => plain(Cow::Owned(s.sample(self.seed, i as u64))),
            SamplerState::Ensemble(e) => plain(Cow::Borrowed(&e.members[i])),
            SamplerState::Dropout { params, rate, extend_to_zpred } => {
                let l = params.layout();
                let fe = DropoutMask::for_draw(l.layout(Segment::Fe), *rate, self.seed, i as u64)?;
                let zp = if *extend_to_zpred {
                    let seed = rng::derive_seed(self.seed, "zpred-dropout", 0);
                    Some(DropoutMask::for_draw(l.layout(Segment::Zpred), *rate, seed, i as u64)?)
                } else {
                    None
                };
                Draw {
                    params: Cow::Borrowed(params),
                    fe_mask: Some(fe),
                    zpred_mask: zp,
                }
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SamplerFile {
            format: FILE_FORMAT.into(),
            version: FILE_VERSION,
            sampler: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: SamplerFile<T> = serde_json::from_str(s)?;
        if file.format != FILE_FORMAT || file.version != FILE_VERSION {
            return Err(Error::Data(format!(
                "unsupported sampler file {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.sampler)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Cluster membership of the rows being predicted.
#[derive(Clone, Copy, Debug)]
pub enum Membership<'a> {
    /// Seen-cluster id per row.
    Known(&'a [usize]),
    Unseen(UnseenMode),
}

/// Predictions of every draw, one row per draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDraws<T> {
    pub y_f: Matrix<T>,
    pub y_m: Matrix<T>,
}

impl<T: Scalar> PredictionDraws<T> {
    /// Column means, the posterior predictive probability per row.
    pub fn mean_y_m(&self) -> Vec<T> {
        self.y_m.column_means()
    }
}

/// Forward pass of one draw.
pub fn predict_draw<T: Scalar>(
    draw: &Draw<'_, T>,
    x: &Matrix<T>,
    membership: Membership<'_>,
) -> Result<(Vec<T>, Vec<T>)> {
    let p = draw.params.as_ref();
    let out = match membership {
        Membership::Known(cl) => {
            let z = Matrix::one_hot(cl, p.layout().n_clusters())?;
            mixed_forward_masked(p, x, &z, draw.fe_mask.as_ref())?
        }
        Membership::Unseen(mode) => predict_unseen(p, x, mode, draw.masks())?,
    };
    Ok((out.y_f, out.y_m))
}

/// Evaluates all draws of `sampler` on `x`.
pub fn posterior_predict<T: Scalar>(
    sampler: &PosteriorSampler<T>,
    x: &Matrix<T>,
    membership: Membership<'_>,
) -> Result<PredictionDraws<T>> {
    let n = x.rows();
    let mut y_f = Matrix::zeros(sampler.draws, n);
    let mut y_m = Matrix::zeros(sampler.draws, n);
    for i in 0..sampler.draws {
        let (f, m) = predict_draw(&sampler.draw(i)?, x, membership)?;
        y_f.row_mut(i).copy_from_slice(&f);
        y_m.row_mut(i).copy_from_slice(&m);
    }
    Ok(PredictionDraws { y_f, y_m })
}

/// Inputs shared by every backend fit within one fold.
#[derive(Clone, Copy, Debug)]
pub struct FitContext<'a, T> {
    pub data: Samples<'a, T>,
    /// Shared initial weights, Z-predictor already fitted.
    pub init: &'a ArmedParams<T>,
    /// Converged point estimate from `init`; SWAG continues from it.
    pub converged: Option<&'a ArmedParams<T>>,
    pub train: &'a TrainConfig,
    pub draws: usize,
    pub seed: u64,
    /// Number of SWAG collection epochs.
    pub swag_epochs: usize,
    /// Also mask the Z-predictor under MC dropout.
    pub dropout_extends_to_zpred: bool,
    /// Train ensemble members concurrently.
    pub parallel: bool,
}

impl<'a, T: Scalar> FitContext<'a, T> {
    pub fn new(data: Samples<'a, T>, init: &'a ArmedParams<T>, train: &'a TrainConfig, seed: u64) -> Self {
        Self {
            data,
            init,
            converged: None,
            train,
            draws: DEFAULT_DRAWS,
            seed,
            swag_epochs: SWAG_EPOCHS,
            dropout_extends_to_zpred: false,
            parallel: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("draw count must be positive".into()));
        }
        self.train.validate()
    }
}

/// Fits the posterior of `backend`.
pub fn fit<T: Scalar>(backend: &Backend, ctx: &FitContext<'_, T>) -> Result<PosteriorSampler<T>> {
    backend.check_domain()?;
    match *backend {
        Backend::Bnn(sel) => fit_bnn(ctx, sel),
        Backend::Swag { variant, lr } => fit_swag(ctx, variant, lr),
        Backend::Dropout { rate } => fit_mc_dropout(ctx, rate),
        Backend::Ensemble(p) => fit_ensemble(ctx, p),
    }
}

pub fn fit_bnn<T: Scalar>(ctx: &FitContext<'_, T>, selection: LayerSelection) -> Result<PosteriorSampler<T>> {
    ctx.check()?;
    let lambda = ctx
        .train
        .weights
        .kl
        .unwrap_or(1.0 / ctx.data.len().max(1) as f64);
    let seed = rng::derive_seed(ctx.seed, "bnn", 0);
    let mut model = BnnModel::new(ctx.init, selection, ctx.train.lr, lambda, seed);
    run_training(&mut model, ctx.data, ctx.train, |_, _| Ok(()))?;
    Ok(PosteriorSampler {
        kind: PosteriorKind::BnnVi,
        draws: ctx.draws,
        seed,
        state: SamplerState::Bnn(model.posterior()),
    })
}

pub fn fit_swag<T: Scalar>(
    ctx: &FitContext<'_, T>,
    variant: SwagVariant,
    lr: f64,
) -> Result<PosteriorSampler<T>> {
    ctx.check()?;
    if ctx.swag_epochs == 0 {
        return Err(Error::Config("SWAG needs at least one collection epoch".into()));
    }
    let start = match ctx.converged {
        Some(p) => p.clone(),
        None => train_armed(ctx.data, ctx.init, ctx.train)?.0,
    };
    let cfg = TrainConfig {
        epochs: ctx.swag_epochs,
        lr,
        dropout: None,
        seed: rng::derive_seed(ctx.seed, "swag-sgd", 0),
        ..ctx.train.clone()
    };
    let mut model = PointModel::sgd(start, lr);
    let mut iterates = Vec::with_capacity(ctx.swag_epochs);
    run_training(&mut model, ctx.data, &cfg, |_, m| {
        iterates.push(m.params.clone());
        Ok(())
    })?;
    let post = SwagPosterior::from_iterates(&iterates, variant)?;
    Ok(PosteriorSampler {
        kind: Backend::Swag { variant, lr }.kind(),
        draws: ctx.draws,
        seed: rng::derive_seed(ctx.seed, "swag", 0),
        state: SamplerState::Swag(post),
    })
}

pub fn fit_mc_dropout<T: Scalar>(ctx: &FitContext<'_, T>, rate: f64) -> Result<PosteriorSampler<T>> {
    ctx.check()?;
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")));
    }
    let cfg = TrainConfig {
        dropout: Some(rate),
        ..ctx.train.clone()
    };
    let (params, _) = train_armed(ctx.data, ctx.init, &cfg)?;
    Ok(PosteriorSampler {
        kind: PosteriorKind::McDropout,
        draws: ctx.draws,
        seed: rng::derive_seed(ctx.seed, "mc-dropout", 0),
        state: SamplerState::Dropout {
            params,
            rate,
            extend_to_zpred: ctx.dropout_extends_to_zpred,
        },
    })
}

pub fn fit_ensemble<T: Scalar>(ctx: &FitContext<'_, T>, perturbation: Perturbation) -> Result<PosteriorSampler<T>> {
    ctx.check()?;
    let subsets: Vec<Vec<usize>> = (0..ctx.draws)
        .map(|m| match perturbation {
            Perturbation::RandomInit => Ok(ctx.data.rows.to_vec()),
            Perturbation::Subsample { fraction } => stratified_subsample(
                ctx.data.rows,
                ctx.data.cluster,
                fraction,
                &mut rng::stream(ctx.seed, "subsample", m as u64),
            ),
        })
        .collect::<Result<_>>()?;
    let member = |m: usize| -> Result<ArmedParams<T>> {
        let init = match perturbation {
            Perturbation::RandomInit => {
                let mut p = ArmedParams::init(
                    ctx.init.layout().clone(),
                    &mut rng::stream(ctx.seed, "member-init", m as u64),
                );
                p.copy_segment_from(ctx.init, Segment::Zpred)?;
                p
            }
            Perturbation::Subsample { .. } => ctx.init.clone(),
        };
        let cfg = TrainConfig {
            seed: rng::derive_seed(ctx.seed, "member", m as u64),
            ..ctx.train.clone()
        };
        let data = Samples {
            rows: &subsets[m],
            ..ctx.data
        };
        Ok(train_armed(data, &init, &cfg)?.0)
    };
    let members: Vec<ArmedParams<T>> = if ctx.parallel {
        (0..ctx.draws).into_par_iter().map(member).collect::<Result<_>>()?
    } else {
        (0..ctx.draws).map(member).collect::<Result<_>>()?
    };
    Ok(PosteriorSampler {
        kind: Backend::Ensemble(perturbation).kind(),
        draws: ctx.draws,
        seed: ctx.seed,
        state: SamplerState::Ensemble(EnsemblePosterior {
            perturbation,
            members,
            subsets,
        }),
    })
}
