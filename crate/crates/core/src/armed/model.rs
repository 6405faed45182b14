//! Forward evaluation, losses and gradients of the ARMED model.

use serde::{Deserialize, Serialize};

use super::params::{ArmedParams, Segment};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{backprop, forward_sample, DropoutMask, Scratch, Trace};
use crate::scalar::{log_sum_exp, sigmoid, softmax_in_place, softplus, Scalar};

/// Fixed-effects and mixed predictions for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedPrediction<T> {
    pub y_f: Vec<T>,
    pub y_m: Vec<T>,
    pub eta_f: Vec<T>,
    pub eta_m: Vec<T>,
    /// RE-scaled inputs fed to the second FE evaluation.
    pub h_r: Matrix<T>,
    /// Cluster membership used for the random effects.
    pub z_used: Matrix<T>,
}

/// Loss term weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub fe: f64,
    pub me: f64,
    pub adversarial: f64,
    /// KL weight for variational layers; `None` means 1/n_train.
    pub kl: Option<f64>,
    /// L2 penalty on the random-effects subnet.
    pub re_l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            fe: 1.0,
            me: 1.0,
            adversarial: 0.1,
            kl: None,
            re_l2: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.fe, self.me, self.adversarial, self.re_l2, self.kl.unwrap_or(0.0)];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Per-term mean losses over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub main: f64,
    pub fe_bce: f64,
    pub me_bce: f64,
    pub adversary_ce: f64,
    pub re_penalty: f64,
}

/// Which prediction an input gradient refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effect {
    /// d eta_F / dx.
    Fixed,
    /// d eta_M / dx, with z held fixed.
    Mixed,
    /// d h_R / dx, the elementwise RE scaling 1 + u(z).
    Random,
}

/// Reusable per-sample buffers.
#[derive(Clone, Debug)]
pub struct Workspace<T> {
    fe_x: Trace<T>,
    fe_h: Trace<T>,
    adv: Trace<T>,
    zp: Trace<T>,
    fe_scratch: Scratch<T>,
    adv_scratch: Scratch<T>,
    zp_scratch: Scratch<T>,
    u: Vec<T>,
    hr: Vec<T>,
    z: Vec<T>,
    d_repr: Vec<T>,
    d_hr: Vec<T>,
    d_adv: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(p: &ArmedParams<T>) -> Self {
        let l = p.layout();
        let fe = l.layout(Segment::Fe);
        let adv = l.layout(Segment::Adv);
        let zp = l.layout(Segment::Zpred);
        let (d, c) = (l.n_features(), l.n_clusters());
        Self {
            fe_x: Trace::new(fe),
            fe_h: Trace::new(fe),
            adv: Trace::new(adv),
            zp: Trace::new(zp),
            fe_scratch: Scratch::new(fe),
            adv_scratch: Scratch::new(adv),
            zp_scratch: Scratch::new(zp),
            u: vec![T::zero(); d + 1],
            hr: vec![T::zero(); d],
            z: vec![T::zero(); c],
            d_repr: vec![T::zero(); adv.input_dim()],
            d_hr: vec![T::zero(); d],
            d_adv: vec![T::zero(); c],
        }
    }
}

fn check_x<T: Scalar>(p: &ArmedParams<T>, x: &Matrix<T>) -> Result<()> {
    if x.cols() != p.layout().n_features() {
        return Err(Error::Argument(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            p.layout().n_features()
        )));
    }
    Ok(())
}

fn check_clusters<T: Scalar>(p: &ArmedParams<T>, n: usize, cluster: &[usize]) -> Result<()> {
    if cluster.len() != n {
        return Err(Error::Argument(format!("{} cluster ids for {n} rows", cluster.len())));
    }
    let c = p.layout().n_clusters();
    if let Some(&bad) = cluster.iter().find(|&&k| k >= c) {
        return Err(Error::Argument(format!(
            "cluster id {bad} is not among the {c} training clusters"
        )));
    }
    Ok(())
}

/// u = W z + b for the linear random-effects subnet.
fn re_forward<T: Scalar>(p: &ArmedParams<T>, z: &[T], u: &mut [T]) {
    let layout = p.layout().layout(Segment::Re);
    let vals = p.segment(Segment::Re);
    let w = &vals[layout.weight_range(0)];
    let b = &vals[layout.bias_range(0)];
    let c = z.len();
    for (o, uo) in u.iter_mut().enumerate() {
        let mut acc = b[o];
        for (&wi, &zi) in w[o * c..(o + 1) * c].iter().zip(z) {
            acc += wi * zi;
        }
        *uo = acc;
    }
}

/// Forward pass of one sample with membership `ws.z`; returns (eta_F, eta_M).
fn sample_forward<T: Scalar>(
    p: &ArmedParams<T>,
    x: &[T],
    mask: Option<&DropoutMask>,
    ws: &mut Workspace<T>,
) -> (T, T) {
    let l = p.layout();
    let fe = l.layout(Segment::Fe);
    let fe_vals = p.segment(Segment::Fe);
    forward_sample(fe, fe_vals, x, mask, &mut ws.fe_x);
    re_forward(p, &ws.z, &mut ws.u);
    for ((h, &xi), &ui) in ws.hr.iter_mut().zip(x).zip(&ws.u) {
        *h = xi * (T::one() + ui);
    }
    forward_sample(fe, fe_vals, &ws.hr, mask, &mut ws.fe_h);
    let d = l.n_features();
    (ws.fe_x.logits()[0], ws.fe_h.logits()[0] + ws.u[d])
}

fn set_one_hot<T: Scalar>(z: &mut [T], k: usize) {
    z.iter_mut().for_each(|v| *v = T::zero());
    z[k] = T::one();
}

/// Mixed forward pass with membership matrix `z` (one-hot or soft).
pub fn mixed_forward<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    z: &Matrix<T>,
) -> Result<MixedPrediction<T>> {
    mixed_forward_masked(p, x, z, None)
}

pub fn mixed_forward_masked<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    z: &Matrix<T>,
    fe_mask: Option<&DropoutMask>,
) -> Result<MixedPrediction<T>> {
    check_x(p, x)?;
    let c = p.layout().n_clusters();
    if z.rows() != x.rows() || z.cols() != c {
        return Err(Error::Config(format!(
            "membership matrix is {}x{}, expected {}x{c}",
            z.rows(),
            z.cols(),
            x.rows()
        )));
    }
    let n = x.rows();
    let d = x.cols();
    let mut ws = Workspace::new(p);
    let mut out = MixedPrediction {
        y_f: Vec::with_capacity(n),
        y_m: Vec::with_capacity(n),
        eta_f: Vec::with_capacity(n),
        eta_m: Vec::with_capacity(n),
        h_r: Matrix::zeros(n, d),
        z_used: z.clone(),
    };
    for i in 0..n {
        ws.z.copy_from_slice(z.row(i));
        let (ef, em) = sample_forward(p, x.row(i), fe_mask, &mut ws);
        out.eta_f.push(ef);
        out.eta_m.push(em);
        out.y_f.push(sigmoid(ef));
        out.y_m.push(sigmoid(em));
        out.h_r.row_mut(i).copy_from_slice(&ws.hr);
    }
    Ok(out)
}

/// Fixed-effects probabilities only.
pub fn fe_forward<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    fe_mask: Option<&DropoutMask>,
) -> Result<Vec<T>> {
    check_x(p, x)?;
    let fe = p.layout().layout(Segment::Fe);
    let vals = p.segment(Segment::Fe);
    let mut trace = Trace::new(fe);
    Ok((0..x.rows())
        .map(|i| {
            forward_sample(fe, vals, x.row(i), fe_mask, &mut trace);
            trace.output()[0]
        })
        .collect())
}

/// Adversary class probabilities, read from the FE representation of `x`.
pub fn adversary_forward<T: Scalar>(p: &ArmedParams<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_x(p, x)?;
    let l = p.layout();
    let (fe, adv) = (l.layout(Segment::Fe), l.layout(Segment::Adv));
    let mut ws = Workspace::new(p);
    let mut out = Matrix::zeros(x.rows(), l.n_clusters());
    for i in 0..x.rows() {
        forward_sample(fe, p.segment(Segment::Fe), x.row(i), None, &mut ws.fe_x);
        forward_sample(adv, p.segment(Segment::Adv), ws.fe_x.representation(), None, &mut ws.adv);
        out.row_mut(i).copy_from_slice(ws.adv.output());
    }
    Ok(out)
}

/// Z-predictor membership probabilities.
pub fn zpred_forward<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    mask: Option<&DropoutMask>,
) -> Result<Matrix<T>> {
    check_x(p, x)?;
    let zl = p.layout().layout(Segment::Zpred);
    let mut trace = Trace::new(zl);
    let mut out = Matrix::zeros(x.rows(), zl.output_dim());
    for i in 0..x.rows() {
        forward_sample(zl, p.segment(Segment::Zpred), x.row(i), mask, &mut trace);
        out.row_mut(i).copy_from_slice(trace.output());
    }
    Ok(out)
}

fn bce_from_logit<T: Scalar>(eta: T, y: T) -> T {
    softplus(eta) - y * eta
}

fn re_penalty<T: Scalar>(p: &ArmedParams<T>, lambda: f64) -> T {
    let ss: T = p.segment(Segment::Re).iter().map(|&v| v * v).sum();
    T::lit(lambda * 0.5) * ss
}

/// Loss terms of the model on labelled rows with known cluster ids.
pub fn armed_loss<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    y: &[u8],
    cluster: &[usize],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    check_x(p, x)?;
    check_clusters(p, x.rows(), cluster)?;
    if y.len() != x.rows() || x.rows() == 0 {
        return Err(Error::Argument(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let l = p.layout();
    let adv = l.layout(Segment::Adv);
    let mut ws = Workspace::new(p);
    let (mut bf, mut bm, mut ce) = (T::zero(), T::zero(), T::zero());
    for i in 0..x.rows() {
        let yi = T::count(y[i] as usize);
        set_one_hot(&mut ws.z, cluster[i]);
        let (ef, em) = sample_forward(p, x.row(i), None, &mut ws);
        bf += bce_from_logit(ef, yi);
        bm += bce_from_logit(em, yi);
        forward_sample(adv, p.segment(Segment::Adv), ws.fe_x.representation(), None, &mut ws.adv);
        let logits = ws.adv.logits();
        ce += log_sum_exp(logits) - logits[cluster[i]];
    }
    let n = T::count(x.rows());
    let (bf, bm, ce) = ((bf / n).to_f64_lossy(), (bm / n).to_f64_lossy(), (ce / n).to_f64_lossy());
    let pen = re_penalty(p, w.re_l2).to_f64_lossy();
    Ok(LossBreakdown {
        main: w.fe * bf + w.me * bm - w.adversarial * ce + pen,
        fe_bce: bf,
        me_bce: bm,
        adversary_ce: ce,
        re_penalty: pen,
    })
}

/// Settings for one main-loss gradient evaluation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MainGrad {
    pub fe: f64,
    pub me: f64,
    pub adversarial: f64,
    pub re_l2: f64,
    pub freeze_re: bool,
}

impl MainGrad {
    pub fn new(w: &LossWeights, freeze_re: bool) -> Self {
        Self {
            fe: w.fe,
            me: w.me,
            adversarial: w.adversarial,
            re_l2: w.re_l2,
            freeze_re,
        }
    }
}

/// Accumulates into `grad` the gradient of the mean main loss over `rows`.
/// `masks[j]` is the FE dropout mask of the j-th row. Returns the loss
/// breakdown of the batch.
pub(crate) fn main_gradient<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    y: &[u8],
    cluster: &[usize],
    rows: &[usize],
    masks: Option<&[DropoutMask]>,
    cfg: MainGrad,
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> LossBreakdown {
    let l = p.layout().clone();
    let fe = l.layout(Segment::Fe);
    let adv = l.layout(Segment::Adv);
    let re = l.layout(Segment::Re);
    let fe_r = l.range(Segment::Fe);
    let re_r = l.range(Segment::Re);
    let fe_vals = p.segment(Segment::Fe);
    let adv_vals = p.segment(Segment::Adv);
    let d = l.n_features();
    let c = l.n_clusters();
    let inv_n = T::one() / T::count(rows.len());
    let (lf, lm, la) = (T::lit(cfg.fe), T::lit(cfg.me), T::lit(cfg.adversarial));
    let (mut bf, mut bm, mut ce) = (T::zero(), T::zero(), T::zero());

    for (j, &i) in rows.iter().enumerate() {
        let xi = x.row(i);
        let yi = T::count(y[i] as usize);
        let k = cluster[i];
        let mask = masks.map(|m| &m[j]);
        set_one_hot(&mut ws.z, k);
        let (ef, em) = sample_forward(p, xi, mask, ws);
        bf += bce_from_logit(ef, yi);
        bm += bce_from_logit(em, yi);

        let use_adv = cfg.adversarial > 0.0;
        if use_adv {
            forward_sample(adv, adv_vals, ws.fe_x.representation(), None, &mut ws.adv);
            let logits = ws.adv.logits();
            ce += log_sum_exp(logits) - logits[k];
            ws.d_adv.copy_from_slice(logits);
            softmax_in_place(&mut ws.d_adv);
            ws.d_adv[k] -= T::one();
            backprop(
                adv,
                adv_vals,
                &ws.adv,
                None,
                &ws.d_adv,
                None,
                None,
                Some(&mut ws.d_repr),
                &mut ws.adv_scratch,
            );
            // The FE subnet maximizes the adversary's loss.
            ws.d_repr.iter_mut().for_each(|v| *v = -la * *v);
        }
        let (fe_grad, rest) = split_two(grad, fe_r.clone(), re_r.clone());
        backprop(
            fe,
            fe_vals,
            &ws.fe_x,
            mask,
            &[lf * (sigmoid(ef) - yi)],
            use_adv.then_some(ws.d_repr.as_slice()),
            Some((fe_grad, inv_n)),
            None,
            &mut ws.fe_scratch,
        );
        let dm = lm * (sigmoid(em) - yi);
        backprop(
            fe,
            fe_vals,
            &ws.fe_h,
            mask,
            &[dm],
            None,
            Some((fe_grad, inv_n)),
            (!cfg.freeze_re).then_some(ws.d_hr.as_mut_slice()),
            &mut ws.fe_scratch,
        );
        if !cfg.freeze_re {
            let re_grad = rest;
            let wr = re.weight_range(0);
            let br = re.bias_range(0);
            for o in 0..=d {
                let du = if o < d { ws.d_hr[o] * xi[o] } else { dm } * inv_n;
                re_grad[br.start + o] += du;
                // z is one-hot, so only column k receives gradient.
                re_grad[wr.start + o * c + k] += du;
            }
        }
    }

    let pen = if cfg.freeze_re || cfg.re_l2 == 0.0 {
        T::zero()
    } else {
        let lam = T::lit(cfg.re_l2);
        for (g, &v) in grad[re_r].iter_mut().zip(p.segment(Segment::Re)) {
            *g += lam * v;
        }
        re_penalty(p, cfg.re_l2)
    };
    let (bf, bm, ce) = (
        (bf * inv_n).to_f64_lossy(),
        (bm * inv_n).to_f64_lossy(),
        (ce * inv_n).to_f64_lossy(),
    );
    let pen = pen.to_f64_lossy();
    LossBreakdown {
        main: cfg.fe * bf + cfg.me * bm - cfg.adversarial * ce + pen,
        fe_bce: bf,
        me_bce: bm,
        adversary_ce: ce,
        re_penalty: pen,
    }
}

/// Disjoint mutable views of two ranges with `a` before `b`.
fn split_two<T>(
    v: &mut [T],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [T], &mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.len()])
}

/// Accumulates the gradient of the mean adversary cross-entropy over
/// `rows` with respect to the adversary weights. Returns the mean loss.
pub(crate) fn adversary_gradient<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    cluster: &[usize],
    rows: &[usize],
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> f64 {
    let l = p.layout().clone();
    let fe = l.layout(Segment::Fe);
    let adv = l.layout(Segment::Adv);
    let adv_r = l.range(Segment::Adv);
    let inv_n = T::one() / T::count(rows.len());
    let mut ce = T::zero();
    for &i in rows {
        let k = cluster[i];
        forward_sample(fe, p.segment(Segment::Fe), x.row(i), None, &mut ws.fe_x);
        forward_sample(adv, p.segment(Segment::Adv), ws.fe_x.representation(), None, &mut ws.adv);
        let logits = ws.adv.logits();
        ce += log_sum_exp(logits) - logits[k];
        ws.d_adv.copy_from_slice(logits);
        softmax_in_place(&mut ws.d_adv);
        ws.d_adv[k] -= T::one();
        backprop(
            adv,
            p.segment(Segment::Adv),
            &ws.adv,
            None,
            &ws.d_adv,
            None,
            Some((&mut grad[adv_r.clone()], inv_n)),
            None,
            &mut ws.adv_scratch,
        );
    }
    (ce * inv_n).to_f64_lossy()
}

/// Accumulates the gradient of the mean membership cross-entropy of the
/// Z-predictor. Returns the mean loss.
pub(crate) fn zpred_gradient<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    cluster: &[usize],
    rows: &[usize],
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> f64 {
    let l = p.layout().clone();
    let zl = l.layout(Segment::Zpred);
    let zr = l.range(Segment::Zpred);
    let inv_n = T::one() / T::count(rows.len());
    let mut ce = T::zero();
    for &i in rows {
        let k = cluster[i];
        forward_sample(zl, p.segment(Segment::Zpred), x.row(i), None, &mut ws.zp);
        let logits = ws.zp.logits();
        ce += log_sum_exp(logits) - logits[k];
        ws.d_adv.copy_from_slice(ws.zp.output());
        ws.d_adv[k] -= T::one();
        backprop(
            zl,
            p.segment(Segment::Zpred),
            &ws.zp,
            None,
            &ws.d_adv,
            None,
            Some((&mut grad[zr.clone()], inv_n)),
            None,
            &mut ws.zp_scratch,
        );
    }
    (ce * inv_n).to_f64_lossy()
}

/// Input gradient of one prediction for a single sample, written to `out`.
/// `z` is the membership row used for the mixed and random effects.
/// With `probability` the gradient is of the probability instead of the logit.
#[allow(clippy::too_many_arguments)]
pub fn effect_gradient<T: Scalar>(
    p: &ArmedParams<T>,
    x: &[T],
    z: &[T],
    effect: Effect,
    probability: bool,
    mask: Option<&DropoutMask>,
    ws: &mut Workspace<T>,
    out: &mut [T],
) {
    let l = p.layout();
    let fe = l.layout(Segment::Fe);
    let fe_vals = p.segment(Segment::Fe);
    ws.z.copy_from_slice(z);
    let (ef, em) = sample_forward(p, x, mask, ws);
    let d = l.n_features();
    match effect {
        Effect::Fixed => {
            let s = if probability { dsigmoid(ef) } else { T::one() };
            backprop(fe, fe_vals, &ws.fe_x, mask, &[s], None, None, Some(out), &mut ws.fe_scratch);
        }
        Effect::Mixed => {
            let s = if probability { dsigmoid(em) } else { T::one() };
            backprop(
                fe,
                fe_vals,
                &ws.fe_h,
                mask,
                &[s],
                None,
                None,
                Some(&mut ws.d_hr),
                &mut ws.fe_scratch,
            );
            for k in 0..d {
                out[k] = ws.d_hr[k] * (T::one() + ws.u[k]);
            }
        }
        Effect::Random => {
            for k in 0..d {
                out[k] = T::one() + ws.u[k];
            }
        }
    }
}

fn dsigmoid<T: Scalar>(eta: T) -> T {
    let s = sigmoid(eta);
    s * (T::one() - s)
}
