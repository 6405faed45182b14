//! Gaussian posterior fitted to constant-rate SGD iterates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::armed::ArmedParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::Scalar;

/// Learning rates admitted for the collection phase.
pub const SWAG_LRS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Default number of collected iterates.
pub const SWAG_EPOCHS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwagVariant {
    Diag,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SwagPosterior<T> {
    pub variant: SwagVariant,
    /// Mean of the collected iterates.
    pub mean: ArmedParams<T>,
    /// Mean of the squared iterates.
    pub sq_mean: Vec<T>,
    /// Last K-1 iterates minus the mean, one per row (full variant only).
    pub deviations: Option<Matrix<T>>,
    /// Number of collected iterates.
    pub k: usize,
}

impl<T: Scalar> SwagPosterior<T> {
    /// Moments of a sequence of flat iterates.
    pub fn from_iterates(iterates: &[ArmedParams<T>], variant: SwagVariant) -> Result<Self> {
        let first = iterates
            .first()
            .ok_or_else(|| Error::Argument("SWAG needs at least one iterate".into()))?;
        let n = first.len();
        let k = iterates.len();
        for (i, it) in iterates.iter().enumerate() {
            if it.layout() != first.layout() {
                return Err(Error::Argument("iterates have different layouts".into()));
            }
            if it.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: 0,
                    message: format!("SWAG iterate {i} is not finite; the learning rate diverged"),
                });
            }
        }
        let kt = T::count(k);
        let mut mean = vec![T::zero(); n];
        let mut sq = vec![T::zero(); n];
        for it in iterates {
            for ((m, s), &v) in mean.iter_mut().zip(&mut sq).zip(it.values()) {
                *m += v;
                *s += v * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= kt);
        sq.iter_mut().for_each(|s| *s /= kt);
        let deviations = match variant {
            SwagVariant::Diag => None,
            SwagVariant::Full => {
                let tail = &iterates[1..];
                let mut d = Matrix::zeros(tail.len(), n);
                for (r, it) in tail.iter().enumerate() {
                    for ((o, &v), &m) in d.row_mut(r).iter_mut().zip(it.values()).zip(&mean) {
                        *o = v - m;
                    }
                }
                Some(d)
            }
        };
        Ok(Self {
            variant,
            mean: ArmedParams::from_values(first.layout().clone(), mean)?,
            sq_mean: sq,
            deviations,
            k,
        })
    }

    /// Per-coordinate variance, max(E[theta^2] - mean^2, 0).
    pub fn diag_variance(&self) -> Vec<T> {
        self.mean
            .values()
            .iter()
            .zip(&self.sq_mean)
            .map(|(&m, &s)| (s - m * m).max(T::zero()))
            .collect()
    }

    /// One flat sample drawn with `rng`.
    pub fn sample_flat<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let var = self.diag_variance();
        let mut out = self.mean.values().to_vec();
        let normal = |r: &mut R| -> T {
            let e: f64 = StandardNormal.sample(r);
            T::lit(e)
        };
        match (&self.variant, &self.deviations) {
            (SwagVariant::Full, Some(d)) if d.rows() > 0 => {
                let half = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                for (o, &v) in out.iter_mut().zip(&var) {
                    *o += half * v.sqrt() * normal(rng);
                }
                let scale = T::one() / (T::lit(2.0) * T::count(d.rows())).sqrt();
                for r in 0..d.rows() {
                    let z = normal(rng) * scale;
                    for (o, &dv) in out.iter_mut().zip(d.row(r)) {
                        *o += z * dv;
                    }
                }
            }
            _ => {
                for (o, &v) in out.iter_mut().zip(&var) {
                    *o += v.sqrt() * normal(rng);
                }
            }
        }
        out
    }

    /// Weight draw `i`.
    pub fn sample(&self, seed: u64, i: u64) -> ArmedParams<T> {
        let flat = self.sample_flat(&mut rng::stream(seed, "swag-draw", i));
        ArmedParams::from_values(self.mean.layout().clone(), flat).expect("sample matches layout")
    }
}
