#![allow(dead_code)]

use std::sync::Arc;

use medl_uq::armed::{ArmedLayout, ArmedParams, ArmedSpec, Samples, TrainConfig};
use medl_uq::matrix::Matrix;
use medl_uq::nn::{backward, Adam, Loss, ParamVector};
use medl_uq::rng;
use medl_uq::simdata::ClusteredDataset;
use medl_uq::stats::Split;
use rand::seq::SliceRandom;

/// Rows of `data` carrying the given split tag.
pub fn rows_with(data: &ClusteredDataset, split: Split) -> Vec<usize> {
    (0..data.len()).filter(|&i| data.split[i] == split).collect()
}

pub fn samples<'a>(data: &'a ClusteredDataset, rows: &'a [usize]) -> Samples<'a, f64> {
    Samples {
        x: &data.x,
        y: &data.y,
        cluster: &data.cluster,
        rows,
    }
}

pub fn init_for(data: &ClusteredDataset, seed: u64) -> ArmedParams<f64> {
    let layout = Arc::new(ArmedLayout::new(ArmedSpec::new(data.n_features(), data.n_seen)).unwrap());
    ArmedParams::init(layout, &mut rng::stream(seed, "init", 0))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// One-sided paired t statistic for `mean(b - a) > 0`.
pub fn paired_t(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    mean(&d) / (sample_var(&d) / d.len() as f64).sqrt()
}

/// Adam on a bare FE network with the summed FE and ME cross-entropies, the
/// loss ARMED reduces to when the random effects stay at zero.
pub fn plain_mlp(
    fe: &mut ParamVector<f64>,
    data: &ClusteredDataset,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Vec<f64> {
    let scale = cfg.weights.fe + cfg.weights.me;
    let mut adam = Adam::new(fe.len(), cfg.lr);
    let n = rows.len() as f64;
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order = rows.to_vec();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = data.x.select_rows(batch);
            let yb = Matrix::from_vec(batch.len(), 1, batch.iter().map(|&i| f64::from(data.y[i])).collect()).unwrap();
            let g = backward(fe, &xb, &yb, Loss::Bce).unwrap();
            let grad: Vec<f64> = g.param_grad.values().iter().map(|v| v * scale).collect();
            adam.step(fe.values_mut(), &grad).unwrap();
            total += scale * g.loss * batch.len() as f64 / n;
        }
        history.push(total);
    }
    history
}
