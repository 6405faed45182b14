use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam optimizer state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Scalar> Adam<T> {
    /// Defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(len: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        let all = 0..params.len();
        self.step_ranges(params, grad, std::slice::from_ref(&all))
    }

    /// One update restricted to `ranges`; other coordinates keep their
    /// values and moments.
    pub fn step_ranges(&mut self, params: &mut [T], grad: &[T], ranges: &[Range<usize>]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Config(format!(
                "adam state has {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        for r in ranges {
            if let Some(i) = grad[r.clone()].iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric {
                    layer: 0,
                    message: format!("non-finite gradient at coordinate {}", r.start + i),
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for r in ranges {
            for i in r.clone() {
                let g = grad[i];
                self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain SGD with a constant learning rate: `θ ← θ − lr·g`.
pub fn sgd_constant_step<T: Scalar>(params: &mut [T], grad: &[T], lr: T) {
    for (p, &g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(3, 0.1_f64);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        // t = 1: m̂ = g, v̂ = g², Δ = −α g / (|g| + ε)
        let lr = 0.01_f64;
        let mut adam = Adam::new(3, lr);
        let g = [2.5_f64, -0.3, 1e-3];
        let mut p = vec![0.0; 3];
        adam.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi + lr * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn repeated_steps_match_replayed_recurrence() {
        // Two identical steps: after each, m̂ = g and v̂ = g² exactly, so the
        // total displacement is twice the single-step displacement.
        let lr = 0.05_f64;
        let g = [0.7_f64, -1.2];
        let mut adam = Adam::new(2, lr);
        let mut p = vec![0.0; 2];
        adam.step(&mut p, &g).unwrap();
        adam.step(&mut p, &g).unwrap();

        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        for (k, &gi) in g.iter().enumerate() {
            let (mut m, mut v, mut theta) = (0.0, 0.0, 0.0);
            for t in 1..=2 {
                m = b1 * m + (1.0 - b1) * gi;
                v = b2 * v + (1.0 - b2) * gi * gi;
                theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            }
            assert!((p[k] - theta).abs() < 1e-15);
            assert!((p[k] + 2.0 * lr * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn step_ranges_touches_only_ranges() {
        let mut adam = Adam::new(4, 0.1_f64);
        let mut p = vec![0.0; 4];
        adam.step_ranges(&mut p, &[1.0; 4], &[1..3]).unwrap();
        assert_eq!(p[0], 0.0);
        assert_eq!(p[3], 0.0);
        assert!(p[1] < 0.0 && p[2] < 0.0);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut adam = Adam::new(2, 0.1_f64);
        let mut p = vec![0.0; 2];
        assert!(adam.step(&mut p, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn sgd_constant_examples() {
        let mut p = vec![1.0_f64];
        sgd_constant_step(&mut p, &[0.0], 0.1);
        assert_eq!(p[0], 1.0);
        sgd_constant_step(&mut p, &[2.0], 0.1);
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut q = vec![3.0_f64];
        for _ in 0..7 {
            sgd_constant_step(&mut q, &[0.5], 0.25);
        }
        assert!((q[0] - (3.0 - 7.0 * 0.25 * 0.5)).abs() < 1e-12);
    }
}
