//! Per-sample forward evaluation and reverse-mode differentiation.

use super::dropout::DropoutMask;
use super::layout::Layout;
use crate::scalar::Scalar;

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// Input of each layer, after dropout.
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn new(layout: &Layout) -> Self {
        let layers = layout.layers();
        Self {
            inputs: layers.iter().map(|l| vec![T::zero(); l.in_dim]).collect(),
            pre: layers.iter().map(|l| vec![T::zero(); l.out_dim]).collect(),
            post: layers.iter().map(|l| vec![T::zero(); l.out_dim]).collect(),
        }
    }

    /// Head output (probabilities for sigmoid/softmax heads).
    pub fn output(&self) -> &[T] {
        &self.post[self.post.len() - 1]
    }

    /// Head pre-activation.
    pub fn logits(&self) -> &[T] {
        &self.pre[self.pre.len() - 1]
    }

    /// Activation of the last hidden layer before dropout, or the raw input
    /// for a single-layer network.
    pub fn representation(&self) -> &[T] {
        let n = self.post.len();
        if n >= 2 {
            &self.post[n - 2]
        } else {
            &self.inputs[0]
        }
    }

    /// Index of the first layer whose pre-activation is not finite.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.pre
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
    }
}

/// Reusable buffers for [`backprop`].
#[derive(Clone, Debug)]
pub struct Scratch<T> {
    delta: Vec<T>,
    d_in: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    pub fn new(layout: &Layout) -> Self {
        let w = layout.max_width();
        Self {
            delta: vec![T::zero(); w],
            d_in: vec![T::zero(); w],
        }
    }
}

/// Evaluates one sample, recording the pass in `trace`.
pub fn forward_sample<T: Scalar>(
    layout: &Layout,
    values: &[T],
    x: &[T],
    mask: Option<&DropoutMask>,
    trace: &mut Trace<T>,
) {
    debug_assert_eq!(x.len(), layout.input_dim());
    let scale = mask.map_or(T::one(), |m| T::lit(m.scale()));
    for (l, shape) in layout.layers().iter().enumerate() {
        if l == 0 {
            trace.inputs[0].copy_from_slice(x);
        } else {
            let src = &trace.post[l - 1];
            match mask {
                Some(m) => {
                    for ((dst, &s), &k) in trace.inputs[l].iter_mut().zip(src).zip(m.keep(l)) {
                        *dst = if k { s * scale } else { T::zero() };
                    }
                }
                None => trace.inputs[l].copy_from_slice(src),
            }
        }
        let w = &values[layout.weight_range(l)];
        let b = &values[layout.bias_range(l)];
        let input = &trace.inputs[l];
        let pre = &mut trace.pre[l];
        for o in 0..shape.out_dim {
            let row = &w[o * shape.in_dim..(o + 1) * shape.in_dim];
            let mut acc = b[o];
            for (&wi, &xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            pre[o] = acc;
        }
        shape.activation.apply(&trace.pre[l], &mut trace.post[l]);
    }
}

/// Reverse-mode pass for one sample.
///
/// `d_logits` is the gradient with respect to the head pre-activation.
/// `d_repr` optionally adds a gradient with respect to
/// [`Trace::representation`]. Parameter gradients are accumulated into
/// `param_grad` scaled by `weight`; the input gradient (unscaled) overwrites
/// `input_grad`.
#[allow(clippy::too_many_arguments)]
pub fn backprop<T: Scalar>(
    layout: &Layout,
    values: &[T],
    trace: &Trace<T>,
    mask: Option<&DropoutMask>,
    d_logits: &[T],
    d_repr: Option<&[T]>,
    mut param_grad: Option<(&mut [T], T)>,
    input_grad: Option<&mut [T]>,
    scratch: &mut Scratch<T>,
) {
    let layers = layout.layers();
    let depth = layers.len();
    let scale = mask.map_or(T::one(), |m| T::lit(m.scale()));
    let out_dim = layers[depth - 1].out_dim;
    scratch.delta[..out_dim].copy_from_slice(d_logits);

    for l in (0..depth).rev() {
        let shape = layers[l];
        let (n_in, n_out) = (shape.in_dim, shape.out_dim);
        let w = &values[layout.weight_range(l)];
        if let Some((g, weight)) = param_grad.as_mut() {
            let input = &trace.inputs[l];
            let wr = layout.weight_range(l);
            let br = layout.bias_range(l);
            for o in 0..n_out {
                let d = scratch.delta[o] * *weight;
                if d == T::zero() {
                    continue;
                }
                let grow = &mut g[wr.start + o * n_in..wr.start + (o + 1) * n_in];
                for (gi, &xi) in grow.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                g[br.start + o] += d;
            }
        }
        let need_input = l > 0 || input_grad.is_some();
        if !need_input {
            break;
        }
        for i in 0..n_in {
            scratch.d_in[i] = T::zero();
        }
        for o in 0..n_out {
            let d = scratch.delta[o];
            if d == T::zero() {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (di, &wi) in scratch.d_in[..n_in].iter_mut().zip(row) {
                *di += d * wi;
            }
        }
        if l == 0 {
            if depth == 1 {
                if let Some(extra) = d_repr {
                    for (di, &e) in scratch.d_in[..n_in].iter_mut().zip(extra) {
                        *di += e;
                    }
                }
            }
            if let Some(out) = input_grad {
                out.copy_from_slice(&scratch.d_in[..n_in]);
            }
            break;
        }
        // Gradient with respect to the previous layer's activation.
        if let Some(m) = mask {
            for (di, &k) in scratch.d_in[..n_in].iter_mut().zip(m.keep(l)) {
                *di = if k { *di * scale } else { T::zero() };
            }
        }
        if l == depth - 1 {
            if let Some(extra) = d_repr {
                for (di, &e) in scratch.d_in[..n_in].iter_mut().zip(extra) {
                    *di += e;
                }
            }
        }
        let prev = layers[l - 1].activation;
        let pre = &trace.pre[l - 1];
        let post = &trace.post[l - 1];
        for i in 0..n_in {
            scratch.delta[i] = scratch.d_in[i] * prev.derivative(pre[i], post[i]);
        }
    }
}
