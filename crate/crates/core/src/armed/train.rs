//! Alternating adversarial training and Z-predictor fitting.

use std::ops::Range;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{adversary_gradient, main_gradient, zpred_gradient, LossWeights, MainGrad, Workspace};
use super::params::{ArmedParams, Segment};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{sgd_constant_step, Adam, DropoutMask};
use crate::rng;
use crate::scalar::Scalar;

/// Labelled rows of a clustered dataset selected for training.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a, T> {
    pub x: &'a Matrix<T>,
    pub y: &'a [u8],
    /// Seen-cluster id of every row of `x`.
    pub cluster: &'a [usize],
    pub rows: &'a [usize],
}

impl<T: Scalar> Samples<'_, T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub(crate) fn validate(&self, n_features: usize, n_clusters: usize) -> Result<()> {
        let n = self.x.rows();
        if self.y.len() != n || self.cluster.len() != n {
            return Err(Error::Data(format!(
                "{} rows, {} labels, {} cluster ids",
                n,
                self.y.len(),
                self.cluster.len()
            )));
        }
        if self.x.cols() != n_features {
            return Err(Error::Config(format!(
                "data has {} features, model expects {n_features}",
                self.x.cols()
            )));
        }
        for &r in self.rows {
            if r >= n {
                return Err(Error::Data(format!("row index {r} out of range")));
            }
            if self.y[r] > 1 {
                return Err(Error::Data(format!("row {r}: label {} is not binary", self.y[r])));
            }
            if self.cluster[r] >= n_clusters {
                return Err(Error::Data(format!(
                    "row {r}: cluster {} is not a training cluster",
                    self.cluster[r]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternation {
    /// A full adversary pass, then a full main pass, every epoch.
    #[default]
    PerEpoch,
    /// One adversary step and one main step per minibatch.
    PerBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub alternation: Alternation,
    /// Keep the random-effects subnet fixed at its initial value.
    pub freeze_re: bool,
    /// Dropout rate applied to the FE subnet during training.
    pub dropout: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            lr: 5e-3,
            weights: LossWeights::default(),
            alternation: Alternation::PerEpoch,
            freeze_re: false,
            dropout: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(r) = self.dropout {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main: f64,
    pub fe_bce: f64,
    pub me_bce: f64,
    /// Adversary cross-entropy seen by the main pass.
    pub adversary_ce: f64,
    /// Adversary cross-entropy during its own pass.
    pub adversary_loss: f64,
    /// Additional regularizer reported by the weight model (KL for BNN).
    pub extra: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn main_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.main).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateGroup {
    /// FE and (unless frozen) RE weights.
    Main,
    Adversary,
}

/// A trainable distribution or point estimate over ARMED weights.
pub trait WeightModel<T: Scalar> {
    fn layout_params(&self) -> &ArmedParams<T>;

    /// Weights used for the next gradient evaluation. `step` numbers the
    /// evaluations within a training run.
    fn weights(&mut self, step: u64) -> &ArmedParams<T>;

    /// Applies the data-loss gradient taken at the weights last returned by
    /// [`WeightModel::weights`]. Returns any extra loss term included in the
    /// update.
    fn apply(&mut self, grad: &[T], group: UpdateGroup, ranges: &[Range<usize>]) -> Result<f64>;
}

#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Adam { main: Adam<T>, adversary: Adam<T> },
    Sgd { lr: T },
}

/// Point-estimate weights trained by Adam or constant-rate SGD.
#[derive(Clone, Debug)]
pub struct PointModel<T> {
    pub params: ArmedParams<T>,
    pub optimizer: Optimizer<T>,
}

impl<T: Scalar> PointModel<T> {
    pub fn adam(params: ArmedParams<T>, lr: f64) -> Self {
        let n = params.len();
        Self {
            params,
            optimizer: Optimizer::Adam {
                main: Adam::new(n, T::lit(lr)),
                adversary: Adam::new(n, T::lit(lr)),
            },
        }
    }

    pub fn sgd(params: ArmedParams<T>, lr: f64) -> Self {
        Self {
            params,
            optimizer: Optimizer::Sgd { lr: T::lit(lr) },
        }
    }
}

impl<T: Scalar> WeightModel<T> for PointModel<T> {
    fn layout_params(&self) -> &ArmedParams<T> {
        &self.params
    }

    fn weights(&mut self, _step: u64) -> &ArmedParams<T> {
        &self.params
    }

    fn apply(&mut self, grad: &[T], group: UpdateGroup, ranges: &[Range<usize>]) -> Result<f64> {
        match &mut self.optimizer {
            Optimizer::Adam { main, adversary } => {
                let opt = match group {
                    UpdateGroup::Main => main,
                    UpdateGroup::Adversary => adversary,
                };
                opt.step_ranges(self.params.values_mut(), grad, ranges)?;
            }
            Optimizer::Sgd { lr } => {
                for r in ranges {
                    if grad[r.clone()].iter().any(|g| !g.is_finite()) {
                        return Err(Error::Numeric {
                            layer: 0,
                            message: "non-finite gradient".into(),
                        });
                    }
                    sgd_constant_step(&mut self.params.values_mut()[r.clone()], &grad[r.clone()], *lr);
                }
            }
        }
        Ok(0.0)
    }
}

fn main_ranges<T: Scalar>(p: &ArmedParams<T>, freeze_re: bool) -> Vec<Range<usize>> {
    let l = p.layout();
    let mut v = vec![l.range(Segment::Fe)];
    if !freeze_re {
        v.push(l.range(Segment::Re));
    }
    v
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

fn shuffled(rows: &[usize], seed: u64, name: &str, epoch: usize) -> Vec<usize> {
    let mut order = rows.to_vec();
    order.shuffle(&mut rng::stream(seed, name, epoch as u64));
    order
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric { layer, message } => Error::Training {
            epoch,
            message: format!("layer {layer}: {message}"),
        },
        other => other,
    }
}

/// Runs the alternating loop on any weight model. `on_epoch` is called
/// after every epoch with the epoch index.
pub fn run_training<T, M, F>(
    model: &mut M,
    data: Samples<'_, T>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainHistory>
where
    T: Scalar,
    M: WeightModel<T>,
    F: FnMut(usize, &M) -> Result<()>,
{
    cfg.validate()?;
    let init = model.layout_params();
    let layout = init.layout().clone();
    data.validate(layout.n_features(), layout.n_clusters())?;
    if data.is_empty() && cfg.epochs > 0 {
        return Err(Error::Data("no training rows".into()));
    }
    let mut ws = Workspace::new(init);
    let main_r = main_ranges(init, cfg.freeze_re);
    let adv_r = vec![layout.range(Segment::Adv)];
    let mg = MainGrad::new(&cfg.weights, cfg.freeze_re);
    let mut grad = vec![T::zero(); layout.len()];
    let fe_layout = layout.layout(Segment::Fe).clone();
    let mut masks: Vec<DropoutMask> = match cfg.dropout {
        Some(rate) if rate > 0.0 => (0..cfg.batch_size)
            .map(|_| DropoutMask::empty(&fe_layout, rate))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let mut history = TrainHistory::default();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut rec = EpochRecord {
            epoch,
            ..EpochRecord::default()
        };
        let main_order = shuffled(data.rows, cfg.seed, "shuffle", epoch);
        let mut mask_rng = rng::stream(cfg.seed, "dropout-train", epoch as u64);
        let n = data.len() as f64;

        let mut adv_step = |model: &mut M, batch: &[usize], step: &mut u64| -> Result<f64> {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let p = model.weights(*step);
            *step += 1;
            let ce = adversary_gradient(p, data.x, data.cluster, batch, &mut ws, &mut grad);
            if !ce.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "adversary loss is not finite".into(),
                });
            }
            model.apply(&grad, UpdateGroup::Adversary, &adv_r).map_err(|e| diverged(epoch, e))?;
            Ok(ce * batch.len() as f64)
        };
        let mut main_grad = vec![T::zero(); layout.len()];
        let mut ws_main = Workspace::new(model.layout_params());
        let mut main_step = |model: &mut M, batch: &[usize], step: &mut u64, rec: &mut EpochRecord| -> Result<()> {
            main_grad.iter_mut().for_each(|g| *g = T::zero());
            let m = if masks.is_empty() {
                None
            } else {
                for mask in masks.iter_mut().take(batch.len()) {
                    mask.resample(&mut mask_rng);
                }
                Some(&masks[..batch.len()])
            };
            let p = model.weights(*step);
            *step += 1;
            let lb = main_gradient(p, data.x, data.y, data.cluster, batch, m, mg, &mut ws_main, &mut main_grad);
            if !lb.main.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("main loss is {}", lb.main),
                });
            }
            let extra = model.apply(&main_grad, UpdateGroup::Main, &main_r).map_err(|e| diverged(epoch, e))?;
            let w = batch.len() as f64 / n;
            rec.main += (lb.main + extra) * w;
            rec.fe_bce += lb.fe_bce * w;
            rec.me_bce += lb.me_bce * w;
            rec.adversary_ce += lb.adversary_ce * w;
            rec.extra += extra * w;
            Ok(())
        };

        match cfg.alternation {
            Alternation::PerEpoch => {
                let adv_order = shuffled(data.rows, cfg.seed, "adv-shuffle", epoch);
                let mut total = 0.0;
                for batch in batches(&adv_order, cfg.batch_size) {
                    total += adv_step(model, batch, &mut step)?;
                }
                rec.adversary_loss = total / n;
                for batch in batches(&main_order, cfg.batch_size) {
                    main_step(model, batch, &mut step, &mut rec)?;
                }
            }
            Alternation::PerBatch => {
                let mut total = 0.0;
                for batch in batches(&main_order, cfg.batch_size) {
                    total += adv_step(model, batch, &mut step)?;
                    main_step(model, batch, &mut step, &mut rec)?;
                }
                rec.adversary_loss = total / n;
            }
        }
        history.epochs.push(rec);
        on_epoch(epoch, model)?;
    }
    Ok(history)
}

/// Trains ARMED point weights with Adam starting from `init`.
pub fn train_armed<T: Scalar>(
    data: Samples<'_, T>,
    init: &ArmedParams<T>,
    cfg: &TrainConfig,
) -> Result<(ArmedParams<T>, TrainHistory)> {
    let mut model = PointModel::adam(init.clone(), cfg.lr);
    let history = run_training(&mut model, data, cfg, |_, _| Ok(()))?;
    Ok((model.params, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZpredConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ZpredConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Fits the Z-predictor segment of `params` by minimizing the membership
/// cross-entropy; all other segments are returned unchanged.
pub fn train_zpredictor<T: Scalar>(
    data: Samples<'_, T>,
    params: &ArmedParams<T>,
    cfg: &ZpredConfig,
) -> Result<ArmedParams<T>> {
    let layout = params.layout().clone();
    data.validate(layout.n_features(), layout.n_clusters())?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("Z-predictor needs a positive batch size and learning rate".into()));
    }
    let mut p = params.clone();
    if layout.n_clusters() == 1 {
        warn!("single training cluster: Z-predictor is constant");
        return Ok(p);
    }
    if data.is_empty() {
        return Err(Error::Data("no training rows".into()));
    }
    let ranges = [layout.range(Segment::Zpred)];
    let mut opt = Adam::new(p.len(), T::lit(cfg.lr));
    let mut ws = Workspace::new(&p);
    let mut grad = vec![T::zero(); p.len()];
    for epoch in 0..cfg.epochs {
        let order = shuffled(data.rows, cfg.seed, "zpred-shuffle", epoch);
        for batch in batches(&order, cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let ce = zpred_gradient(&p, data.x, data.cluster, batch, &mut ws, &mut grad);
            if !ce.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "Z-predictor loss is not finite".into(),
                });
            }
            opt.step_ranges(p.values_mut(), &grad, &ranges)
                .map_err(|e| diverged(epoch, e))?;
        }
    }
    Ok(p)
}
