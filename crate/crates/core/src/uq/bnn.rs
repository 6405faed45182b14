//! Mean-field Gaussian variational weights trained by reparameterization.

use std::ops::Range;

use log::warn;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::armed::{ArmedLayout, ArmedParams, Segment, UpdateGroup, WeightModel};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng;
use crate::scalar::{sigmoid, softplus, softplus_inv, Scalar};

/// Smallest admissible posterior standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Initial posterior standard deviation.
pub const SIGMA_INIT: f64 = 1e-3;

/// Which FE layers carry a weight distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSelection {
    First,
    Last,
    All,
}

impl LayerSelection {
    pub const ALL: [LayerSelection; 3] = [LayerSelection::First, LayerSelection::Last, LayerSelection::All];

    pub fn name(self) -> &'static str {
        match self {
            LayerSelection::First => "first",
            LayerSelection::Last => "last",
            LayerSelection::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer selection `{s}`")))
    }

    /// Flat-vector ranges of the selected layers.
    pub fn ranges(self, layout: &ArmedLayout) -> Vec<Range<usize>> {
        let fe = layout.layout(Segment::Fe);
        let base = layout.range(Segment::Fe).start;
        let layers: Vec<usize> = match self {
            LayerSelection::First => vec![0],
            LayerSelection::Last => vec![fe.depth() - 1],
            LayerSelection::All => (0..fe.depth()).collect(),
        };
        layers
            .into_iter()
            .map(|l| {
                let r = fe.layer_range(l);
                base + r.start..base + r.end
            })
            .collect()
    }

    fn coords(self, layout: &ArmedLayout) -> Vec<usize> {
        self.ranges(layout).into_iter().flatten().collect()
    }
}

/// KL divergence of N(mu, sigma^2) from N(0, 1).
pub fn kl_standard_normal<T: Scalar>(mu: T, sigma: T) -> T {
    (T::one() / sigma).ln() + (sigma * sigma + mu * mu - T::one()) * T::lit(0.5)
}

/// Fitted variational posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BnnPosterior<T> {
    pub mu: ArmedParams<T>,
    pub selection: LayerSelection,
    /// Standard deviations of the selected coordinates, in flat order.
    pub sigma: Vec<T>,
}

impl<T: Scalar> BnnPosterior<T> {
    pub fn new(mu: ArmedParams<T>, selection: LayerSelection, sigma: Vec<T>) -> Result<Self> {
        let n = selection.coords(mu.layout()).len();
        if sigma.len() != n {
            return Err(Error::Config(format!("{} sigmas for {n} variational weights", sigma.len())));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= T::zero())) {
            return Err(Error::Config("posterior sigma must be finite and >= 0".into()));
        }
        Ok(Self { mu, selection, sigma })
    }

    /// Weight draw `i`.
    pub fn sample(&self, seed: u64, i: u64) -> ArmedParams<T> {
        let mut r = rng::stream(seed, "bnn-draw", i);
        let mut p = self.mu.clone();
        let coords = self.selection.coords(p.layout());
        let vals = p.values_mut();
        for (&c, &s) in coords.iter().zip(&self.sigma) {
            let e: f64 = StandardNormal.sample(&mut r);
            vals[c] += s * T::lit(e);
        }
        p
    }

    pub fn kl(&self) -> T {
        let coords = self.selection.coords(self.mu.layout());
        coords
            .iter()
            .zip(&self.sigma)
            .map(|(&c, &s)| kl_standard_normal(self.mu.values()[c], s))
            .sum()
    }
}

/// Variational weights during training.
#[derive(Clone, Debug)]
pub struct BnnModel<T> {
    selection: LayerSelection,
    coords: Vec<usize>,
    /// Means of all weights followed by rho of the selected ones.
    state: Vec<T>,
    eps: Vec<T>,
    current: ArmedParams<T>,
    main: Adam<T>,
    adversary: Adam<T>,
    lambda_kl: T,
    seed: u64,
    clamped: bool,
}

impl<T: Scalar> BnnModel<T> {
    pub fn new(init: &ArmedParams<T>, selection: LayerSelection, lr: f64, lambda_kl: f64, seed: u64) -> Self {
        let coords = selection.coords(init.layout());
        let rho0 = softplus_inv(T::lit(SIGMA_INIT));
        let mut state = init.values().to_vec();
        state.extend(std::iter::repeat_n(rho0, coords.len()));
        let len = state.len();
        Self {
            selection,
            eps: vec![T::zero(); coords.len()],
            coords,
            state,
            current: init.clone(),
            main: Adam::new(len, T::lit(lr)),
            adversary: Adam::new(len, T::lit(lr)),
            lambda_kl: T::lit(lambda_kl),
            seed,
            clamped: false,
        }
    }

    fn sigma(&mut self, j: usize) -> T {
        let n = self.current.len();
        let s = softplus(self.state[n + j]);
        let floor = T::lit(SIGMA_FLOOR);
        if s < floor || !s.is_finite() {
            if !self.clamped {
                warn!("variational sigma underflow; clamping at {SIGMA_FLOOR}");
                self.clamped = true;
            }
            floor
        } else {
            s
        }
    }

    pub fn posterior(mut self) -> BnnPosterior<T> {
        let n = self.current.len();
        let sigma: Vec<T> = (0..self.coords.len()).map(|j| self.sigma(j)).collect();
        let mu = ArmedParams::from_values(self.current.layout().clone(), self.state[..n].to_vec())
            .expect("mean vector matches layout");
        BnnPosterior {
            mu,
            selection: self.selection,
            sigma,
        }
    }
}

impl<T: Scalar> WeightModel<T> for BnnModel<T> {
    fn layout_params(&self) -> &ArmedParams<T> {
        &self.current
    }

    fn weights(&mut self, step: u64) -> &ArmedParams<T> {
        let n = self.current.len();
        let mut r = rng::stream(self.seed, "bnn-noise", step);
        for j in 0..self.coords.len() {
            let e: f64 = StandardNormal.sample(&mut r);
            self.eps[j] = T::lit(e);
        }
        let sig: Vec<T> = (0..self.coords.len()).map(|j| self.sigma(j)).collect();
        let vals = self.current.values_mut();
        vals.copy_from_slice(&self.state[..n]);
        for (j, &c) in self.coords.iter().enumerate() {
            vals[c] += sig[j] * self.eps[j];
        }
        &self.current
    }

    fn apply(&mut self, grad: &[T], group: UpdateGroup, ranges: &[Range<usize>]) -> Result<f64> {
        let n = self.current.len();
        let m = self.coords.len();
        let mut full = vec![T::zero(); n + m];
        for r in ranges {
            full[r.clone()].copy_from_slice(&grad[r.clone()]);
        }
        let mut all: Vec<Range<usize>> = ranges.to_vec();
        let mut kl = T::zero();
        if group == UpdateGroup::Main {
            for j in 0..m {
                let c = self.coords[j];
                let s = self.sigma(j);
                let mu = self.state[c];
                kl += kl_standard_normal(mu, s);
                full[c] += self.lambda_kl * mu;
                let ds = grad[c] * self.eps[j] + self.lambda_kl * (s - T::one() / s);
                full[n + j] = ds * sigmoid(self.state[n + j]);
            }
            all.push(n..n + m);
        }
        let opt = match group {
            UpdateGroup::Main => &mut self.main,
            UpdateGroup::Adversary => &mut self.adversary,
        };
        opt.step_ranges(&mut self.state, &full, &all)?;
        Ok((self.lambda_kl * kl).to_f64_lossy())
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::armed::ArmedSpec;
    use approx::assert_abs_diff_eq;

    fn params() -> ArmedParams<f64> {
        let layout = Arc::new(ArmedLayout::new(ArmedSpec::new(3, 2)).unwrap());
        ArmedParams::init(layout, &mut rng::stream(1, "init", 0))
    }

    #[test]
    fn kl_closed_form() {
        assert_abs_diff_eq!(kl_standard_normal(0.0, 1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_standard_normal(1.0, 1.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_standard_normal(0.0, 0.5), 2f64.ln() - 0.375, epsilon = 1e-15);
    }

    #[test]
    fn selection_ranges() {
        let p = params();
        let l = p.layout();
        let fe = l.range(Segment::Fe);
        assert_eq!(LayerSelection::All.ranges(l), {
            let mut v = Vec::new();
            let fl = l.layout(Segment::Fe);
            for i in 0..fl.depth() {
                let r = fl.layer_range(i);
                v.push(fe.start + r.start..fe.start + r.end);
            }
            v
        });
        assert_eq!(LayerSelection::First.ranges(l)[0].start, fe.start);
        assert_eq!(LayerSelection::Last.ranges(l)[0].end, fe.end);
        assert_eq!(LayerSelection::parse("last").unwrap(), LayerSelection::Last);
        assert!(LayerSelection::parse("middle").is_err());
    }

    #[test]
    fn zero_sigma_draws_equal_mean() {
        let p = params();
        let n = LayerSelection::All.coords(p.layout()).len();
        let post = BnnPosterior::new(p.clone(), LayerSelection::All, vec![0.0; n]).unwrap();
        for i in 0..5 {
            assert_eq!(post.sample(3, i), p);
        }
    }

    #[test]
    fn draws_touch_only_selected_layers() {
        let p = params();
        let n = LayerSelection::First.coords(p.layout()).len();
        let post = BnnPosterior::new(p.clone(), LayerSelection::First, vec![0.1; n]).unwrap();
        let d = post.sample(4, 0);
        let sel = LayerSelection::First.ranges(p.layout())[0].clone();
        for i in 0..p.len() {
            if sel.contains(&i) {
                assert_ne!(d.values()[i], p.values()[i]);
            } else {
                assert_eq!(d.values()[i], p.values()[i]);
            }
        }
        assert_eq!(post.sample(4, 0), d);
    }

    #[test]
    fn initial_sigma_and_clamp() {
        let p = params();
        let mut m = BnnModel::new(&p, LayerSelection::Last, 1e-3, 0.01, 0);
        assert_abs_diff_eq!(m.sigma(0), SIGMA_INIT, epsilon = 1e-15);
        let n = p.len();
        m.state[n] = -1e3;
        assert_eq!(m.sigma(0), SIGMA_FLOOR);
        assert!(m.clamped);
    }
}
