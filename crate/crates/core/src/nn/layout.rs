use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub(crate) fn apply<T: Scalar>(self, pre: &[T], out: &mut [T]) {
        match self {
            Activation::Identity => out.copy_from_slice(pre),
            Activation::Relu => {
                for (o, &p) in out.iter_mut().zip(pre) {
                    // NaN propagates
                    *o = if p < T::zero() { T::zero() } else { p };
                }
            }
            Activation::Sigmoid => {
                for (o, &p) in out.iter_mut().zip(pre) {
                    *o = crate::scalar::sigmoid(p);
                }
            }
            Activation::Softmax => {
                out.copy_from_slice(pre);
                crate::scalar::softmax_in_place(out);
            }
        }
    }

    /// Elementwise derivative. Softmax is only valid as a head, where
    /// gradients arrive already taken with respect to the logits.
    #[inline]
    pub(crate) fn derivative<T: Scalar>(self, pre: T, post: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => post * (T::one() - post),
            Activation::Softmax => unreachable!("softmax is only permitted as an output head"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Ordered layer descriptors mapping slices of a flat parameter vector to
/// dense layers. Each layer stores its `out x in` weights row-major, then its
/// `out` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerShape>", into = "Vec<LayerShape>")]
pub struct Layout {
    layers: Vec<LayerShape>,
    offsets: Vec<usize>,
    len: usize,
}

impl TryFrom<Vec<LayerShape>> for Layout {
    type Error = Error;

    fn try_from(layers: Vec<LayerShape>) -> Result<Self> {
        Layout::new(layers)
    }
}

impl From<Layout> for Vec<LayerShape> {
    fn from(l: Layout) -> Self {
        l.layers
    }
}

impl Layout {
    pub fn new(layers: Vec<LayerShape>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(Error::Config(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.in_dim,
                    i - 1,
                    layers[i - 1].out_dim
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::Config(format!(
                    "softmax is only allowed on the output layer (found on layer {i})"
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut len = 0;
        for l in &layers {
            offsets.push(len);
            len += l.param_count();
        }
        Ok(Self {
            layers,
            offsets,
            len,
        })
    }

    /// Builds a chain from an input width and `(width, activation)` pairs.
    pub fn chain(input_dim: usize, dims: &[(usize, Activation)]) -> Result<Self> {
        let mut prev = input_dim;
        let layers = dims
            .iter()
            .map(|&(out_dim, activation)| {
                let l = LayerShape {
                    in_dim: prev,
                    out_dim,
                    activation,
                };
                prev = out_dim;
                l
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn head(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    /// Width of the representation feeding the output layer.
    pub fn representation_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].in_dim
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim.max(l.out_dim))
            .max()
            .unwrap_or(0)
    }

    pub fn layer_range(&self, l: usize) -> Range<usize> {
        self.offsets[l]..self.offsets[l] + self.layers[l].param_count()
    }

    pub fn weight_range(&self, l: usize) -> Range<usize> {
        let s = self.offsets[l];
        s..s + self.layers[l].in_dim * self.layers[l].out_dim
    }

    pub fn bias_range(&self, l: usize) -> Range<usize> {
        let w = self.weight_range(l);
        w.end..w.end + self.layers[l].out_dim
    }
}

/// Architecture of a dense classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_dim: usize,
    pub head: Activation,
}

impl NetworkSpec {
    /// Hidden widths of the conventional model.
    pub const DEFAULT_HIDDEN: [usize; 4] = [4, 4, 4, 4];

    /// `input -> [4,4,4,4] ReLU -> 1 sigmoid`.
    pub fn binary_classifier(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: Self::DEFAULT_HIDDEN.to_vec(),
            hidden_activation: Activation::Relu,
            output_dim: 1,
            head: Activation::Sigmoid,
        }
    }

    /// Softmax classifier over `n_classes`.
    pub fn multiclass(input_dim: usize, hidden: Vec<usize>, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            hidden_activation: Activation::Relu,
            output_dim: n_classes,
            head: Activation::Softmax,
        }
    }

    pub fn layout(&self) -> Result<Layout> {
        let mut dims: Vec<(usize, Activation)> = self
            .hidden
            .iter()
            .map(|&h| (h, self.hidden_activation))
            .collect();
        dims.push((self.output_dim, self.head));
        Layout::chain(self.input_dim, &dims)
    }
}

/// Flat weights and biases with the layout that addresses them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    layout: Arc<Layout>,
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![T::zero(); layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Config(format!(
                "parameter vector has {} values, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Uniform He (ReLU layers) or Glorot (other layers) initialization with
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(layout: Arc<Layout>, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout);
        init_layers(&p.layout.clone(), &mut p.values, rng);
        p
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weights(&self, layer: usize) -> &[T] {
        &self.values[self.layout.weight_range(layer)]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        &self.values[self.layout.bias_range(layer)]
    }

    /// Element-wise sum; layouts must match.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.layout != other.layout {
            return Err(Error::Config("cannot add parameter vectors with different layouts".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Self {
            layout: self.layout.clone(),
            values,
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Config("cannot combine parameter vectors with different layouts".into()));
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }
}

pub(crate) fn init_layers<T: Scalar, R: Rng + ?Sized>(layout: &Layout, values: &mut [T], rng: &mut R) {
    for (l, shape) in layout.layers().iter().enumerate() {
        let fan_in = shape.in_dim as f64;
        let fan_out = shape.out_dim as f64;
        let limit = match shape.activation {
            Activation::Relu => (6.0 / fan_in).sqrt(),
            _ => (6.0 / (fan_in + fan_out)).sqrt(),
        };
        for w in &mut values[layout.weight_range(l)] {
            *w = T::lit(rng.random_range(-limit..limit));
        }
        for b in &mut values[layout.bias_range(l)] {
            *b = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_layout_counts() {
        let spec = NetworkSpec::binary_classifier(25);
        assert_eq!(spec.hidden, vec![4, 4, 4, 4]);
        let l = spec.layout().unwrap();
        assert_eq!(l.depth(), 5);
        assert_eq!(l.len(), 25 * 4 + 4 + 3 * (16 + 4) + 4 + 1);
        assert_eq!(l.representation_dim(), 4);
        assert_eq!(l.head(), Activation::Sigmoid);
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let bad = Layout::new(vec![
            LayerShape { in_dim: 3, out_dim: 4, activation: Activation::Relu },
            LayerShape { in_dim: 5, out_dim: 1, activation: Activation::Sigmoid },
        ]);
        assert!(matches!(bad, Err(Error::Config(_))));
        let softmax_hidden = Layout::chain(2, &[(3, Activation::Softmax), (1, Activation::Sigmoid)]);
        assert!(softmax_hidden.is_err());
    }

    #[test]
    fn ranges_tile_the_vector() {
        let l = Layout::chain(3, &[(4, Activation::Relu), (2, Activation::Softmax)]).unwrap();
        assert_eq!(l.weight_range(0), 0..12);
        assert_eq!(l.bias_range(0), 12..16);
        assert_eq!(l.weight_range(1), 16..24);
        assert_eq!(l.bias_range(1), 24..26);
        assert_eq!(l.len(), 26);
    }

    #[test]
    fn add_requires_equal_layouts() {
        let a = Arc::new(Layout::chain(2, &[(1, Activation::Identity)]).unwrap());
        let b = Arc::new(Layout::chain(3, &[(1, Activation::Identity)]).unwrap());
        let p = ParamVector::<f64>::from_values(a.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let q = ParamVector::<f64>::from_values(a, vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(p.add(&q).unwrap().values(), &[1.5, 2.5, 3.5]);
        assert!(p.add(&ParamVector::zeros(b)).is_err());
    }
}
