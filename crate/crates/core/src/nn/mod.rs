//! Minimal dense-network core: forward evaluation, reverse-mode gradients
//! with respect to parameters and inputs, dropout masks and optimizers.
//!
//! Networks are plain data: a [`Layout`] plus a flat parameter slice. All
//! evaluation functions are pure and can be called concurrently on shared
//! parameters.

mod dropout;
mod layout;
mod network;
mod optim;

pub use dropout::DropoutMask;
pub use layout::{Activation, LayerShape, Layout, NetworkSpec, ParamVector};
pub use network::{backprop, forward_sample, Scratch, Trace};
pub use optim::{sgd_constant_step, Adam};

pub(crate) use layout::init_layers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{log_sum_exp, sigmoid, softplus, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Binary cross-entropy on a single sigmoid output.
    Bce,
    /// Categorical cross-entropy on a softmax head.
    CategoricalCe,
}

/// Quantity differentiated by [`input_gradient`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradTarget {
    /// Pre-sigmoid logit of the positive class.
    #[default]
    Logit,
    /// Post-sigmoid probability.
    Probability,
}

/// Loss and its gradients for a batch.
#[derive(Clone, Debug)]
pub struct GradResult<T> {
    /// Mean loss over the batch.
    pub loss: T,
    /// Gradient of the mean loss.
    pub param_grad: ParamVector<T>,
    /// Per-sample gradient of that sample's loss with respect to its inputs.
    pub input_grad: Matrix<T>,
}

fn check_input<T: Scalar>(layout: &Layout, x: &Matrix<T>) -> Result<()> {
    if x.cols() != layout.input_dim() {
        return Err(Error::Config(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            layout.input_dim()
        )));
    }
    Ok(())
}

fn check_mask(layout: &Layout, mask: Option<&DropoutMask>) -> Result<()> {
    match mask {
        Some(m) if !m.matches(layout) => Err(Error::Config(
            "dropout mask does not match the network layout".into(),
        )),
        _ => Ok(()),
    }
}

/// Head outputs for every row of `x`.
pub fn forward<T: Scalar>(
    params: &ParamVector<T>,
    x: &Matrix<T>,
    mask: Option<&DropoutMask>,
) -> Result<Matrix<T>> {
    eval(params, x, mask, |t| t.output())
}

/// Head pre-activations for every row of `x`.
pub fn forward_logits<T: Scalar>(
    params: &ParamVector<T>,
    x: &Matrix<T>,
    mask: Option<&DropoutMask>,
) -> Result<Matrix<T>> {
    eval(params, x, mask, |t| t.logits())
}

fn eval<T: Scalar>(
    params: &ParamVector<T>,
    x: &Matrix<T>,
    mask: Option<&DropoutMask>,
    pick: impl Fn(&Trace<T>) -> &[T],
) -> Result<Matrix<T>> {
    let layout = params.layout();
    check_input(layout, x)?;
    check_mask(layout, mask)?;
    let mut trace = Trace::new(layout);
    let mut out = Matrix::zeros(x.rows(), layout.output_dim());
    for (i, row) in x.iter_rows().enumerate() {
        forward_sample(layout, params.values(), row, mask, &mut trace);
        out.row_mut(i).copy_from_slice(pick(&trace));
    }
    Ok(out)
}

/// Per-sample loss and gradient with respect to the head logits.
pub(crate) fn loss_and_logit_grad<T: Scalar>(loss: Loss, logits: &[T], target: &[T], d: &mut [T]) -> T {
    match loss {
        Loss::Bce => {
            let (z, y) = (logits[0], target[0]);
            d[0] = sigmoid(z) - y;
            softplus(z) - y * z
        }
        Loss::CategoricalCe => {
            let lse = log_sum_exp(logits);
            let mut l = lse;
            for ((di, &z), &y) in d.iter_mut().zip(logits).zip(target) {
                *di = (z - lse).exp() - y;
                l -= y * z;
            }
            l
        }
    }
}

/// Mean loss over the batch with exact reverse-mode gradients.
pub fn backward<T: Scalar>(
    params: &ParamVector<T>,
    x: &Matrix<T>,
    targets: &Matrix<T>,
    loss: Loss,
) -> Result<GradResult<T>> {
    let layout = params.layout();
    check_input(layout, x)?;
    if x.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if targets.rows() != x.rows() || targets.cols() != layout.output_dim() {
        return Err(Error::Config(format!(
            "targets are {}x{}, expected {}x{}",
            targets.rows(),
            targets.cols(),
            x.rows(),
            layout.output_dim()
        )));
    }
    match (loss, layout.head()) {
        (Loss::Bce, Activation::Sigmoid) if layout.output_dim() == 1 => {}
        (Loss::CategoricalCe, Activation::Softmax) => {}
        (l, h) => {
            return Err(Error::Config(format!(
                "loss {l:?} is incompatible with a {h:?} head of width {}",
                layout.output_dim()
            )))
        }
    }
    let n = x.rows();
    let inv_n = T::one() / T::count(n);
    let mut trace = Trace::new(layout);
    let mut scratch = Scratch::new(layout);
    let mut param_grad = ParamVector::zeros(layout.clone());
    let mut input_grad = Matrix::zeros(n, layout.input_dim());
    let mut d = vec![T::zero(); layout.output_dim()];
    let mut total = T::zero();
    for i in 0..n {
        forward_sample(layout, params.values(), x.row(i), None, &mut trace);
        let l = loss_and_logit_grad(loss, trace.logits(), targets.row(i), &mut d);
        if !l.is_finite() {
            return Err(Error::Numeric {
                layer: trace.first_non_finite_layer().unwrap_or(layout.depth() - 1),
                message: format!("non-finite loss for sample {i}"),
            });
        }
        total += l;
        backprop(
            layout,
            params.values(),
            &trace,
            None,
            &d,
            None,
            Some((param_grad.values_mut(), inv_n)),
            Some(input_grad.row_mut(i)),
            &mut scratch,
        );
    }
    Ok(GradResult {
        loss: total * inv_n,
        param_grad,
        input_grad,
    })
}

/// Per-sample gradient of the scalar prediction with respect to the inputs.
/// Requires a single-output network.
pub fn input_gradient<T: Scalar>(
    params: &ParamVector<T>,
    x: &Matrix<T>,
    target: GradTarget,
    mask: Option<&DropoutMask>,
) -> Result<Matrix<T>> {
    let layout = params.layout();
    check_input(layout, x)?;
    check_mask(layout, mask)?;
    if layout.output_dim() != 1 {
        return Err(Error::Config(
            "input gradients are defined for single-output networks".into(),
        ));
    }
    let mut trace = Trace::new(layout);
    let mut scratch = Scratch::new(layout);
    let mut out = Matrix::zeros(x.rows(), layout.input_dim());
    for i in 0..x.rows() {
        forward_sample(layout, params.values(), x.row(i), mask, &mut trace);
        let d = match target {
            GradTarget::Logit => T::one(),
            GradTarget::Probability => {
                let p = trace.output()[0];
                match layout.head() {
                    Activation::Sigmoid => p * (T::one() - p),
                    _ => T::one(),
                }
            }
        };
        backprop(
            layout,
            params.values(),
            &trace,
            mask,
            &[d],
            None,
            None,
            Some(out.row_mut(i)),
            &mut scratch,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use std::sync::Arc;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut r = rng::stream(seed, "test-x", 0);
        let data = (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let layout = Arc::new(NetworkSpec::binary_classifier(5).layout().unwrap());
        let p = ParamVector::<f64>::zeros(layout);
        let y = forward(&p, &random_batch(7, 5, 1), None).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn affine_identity_network() {
        let layout = Arc::new(Layout::chain(1, &[(1, Activation::Identity)]).unwrap());
        let p = ParamVector::from_values(layout, vec![2.0_f64, 1.0]).unwrap();
        let x = Matrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(forward(&p, &x, None).unwrap().get(0, 0), 7.0);
    }

    #[test]
    fn zero_rate_mask_is_identity() {
        let layout = Arc::new(NetworkSpec::binary_classifier(4).layout().unwrap());
        let p = ParamVector::<f64>::init(layout.clone(), &mut rng::stream(3, "init", 0));
        let x = random_batch(9, 4, 2);
        let m = DropoutMask::for_draw(&layout, 0.0, 1, 0).unwrap();
        assert_eq!(forward(&p, &x, None).unwrap(), forward(&p, &x, Some(&m)).unwrap());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = NetworkSpec::multiclass(3, vec![5], 7);
        let layout = Arc::new(spec.layout().unwrap());
        let p = ParamVector::<f64>::init(layout, &mut rng::stream(4, "init", 0));
        let y = forward(&p, &random_batch(10, 3, 5), None).unwrap();
        for r in y.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let layout = Arc::new(NetworkSpec::binary_classifier(4).layout().unwrap());
        let p = ParamVector::<f64>::zeros(layout);
        assert!(matches!(forward(&p, &random_batch(2, 3, 0), None), Err(Error::Config(_))));
    }

    #[test]
    fn single_unit_input_gradient_closed_form() {
        let layout = Arc::new(Layout::chain(1, &[(1, Activation::Sigmoid)]).unwrap());
        for &(w, b, x) in &[(0.7_f64, -0.2_f64, 1.3_f64), (-2.0, 0.5, -0.4), (3.0, 0.0, 0.0)] {
            let p = ParamVector::from_values(layout.clone(), vec![w, b]).unwrap();
            let xm = Matrix::from_rows(&[[x]]).unwrap();
            let g = input_gradient(&p, &xm, GradTarget::Probability, None).unwrap();
            let s = sigmoid(w * x + b);
            assert!((g.get(0, 0) - s * (1.0 - s) * w).abs() < 1e-15);
            let gl = input_gradient(&p, &xm, GradTarget::Logit, None).unwrap();
            assert_eq!(gl.get(0, 0), w);
        }
    }

    #[test]
    fn bce_stationary_point_at_half() {
        let layout = Arc::new(Layout::chain(2, &[(1, Activation::Sigmoid)]).unwrap());
        let p = ParamVector::<f64>::zeros(layout);
        let x = random_batch(4, 2, 9);
        let y = Matrix::from_vec(4, 1, vec![0.5; 4]).unwrap();
        let g = backward(&p, &x, &y, Loss::Bce).unwrap();
        assert_eq!(g.param_grad.bias(0)[0], 0.0);
    }

    #[test]
    fn incompatible_loss_and_head() {
        let layout = Arc::new(NetworkSpec::multiclass(2, vec![], 3).layout().unwrap());
        let p = ParamVector::<f64>::zeros(layout);
        let x = random_batch(2, 2, 0);
        let y = Matrix::zeros(2, 3);
        assert!(backward(&p, &x, &y, Loss::Bce).is_err());
        assert!(backward(&p, &x, &y, Loss::CategoricalCe).is_ok());
    }

    #[test]
    fn non_finite_loss_reports_layer() {
        let layout = Arc::new(NetworkSpec::binary_classifier(2).layout().unwrap());
        let mut p = ParamVector::<f64>::init(layout, &mut rng::stream(0, "init", 0));
        p.values_mut()[0] = f64::NAN;
        let x = random_batch(2, 2, 0);
        let y = Matrix::zeros(2, 1);
        match backward(&p, &x, &y, Loss::Bce) {
            Err(Error::Numeric { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn f32_forward_agrees_with_f64() {
        let layout = Arc::new(NetworkSpec::binary_classifier(3).layout().unwrap());
        let p64 = ParamVector::<f64>::init(layout.clone(), &mut rng::stream(8, "init", 0));
        let p32 = ParamVector::<f32>::from_values(
            layout,
            p64.values().iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let x64 = random_batch(5, 3, 8);
        let x32 = Matrix::from_vec(5, 3, x64.as_slice().iter().map(|&v| v as f32).collect()).unwrap();
        let a = forward(&p64, &x64, None).unwrap();
        let b = forward(&p32, &x32, None).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - *v as f64).abs() < 1e-5);
        }
    }
}
