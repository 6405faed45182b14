use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_layers, Activation, Layout, NetworkSpec, ParamVector};
use crate::scalar::Scalar;

/// Architecture of the four ARMED subnetworks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmedSpec {
    pub n_features: usize,
    /// Number of clusters seen during training.
    pub n_clusters: usize,
    #[serde(default = "default_fe_hidden")]
    pub fe_hidden: Vec<usize>,
    #[serde(default = "default_fe_activation")]
    pub fe_activation: Activation,
    #[serde(default = "default_aux_hidden")]
    pub adv_hidden: Vec<usize>,
    #[serde(default = "default_aux_hidden")]
    pub zpred_hidden: Vec<usize>,
}

fn default_fe_hidden() -> Vec<usize> {
    NetworkSpec::DEFAULT_HIDDEN.to_vec()
}

fn default_fe_activation() -> Activation {
    Activation::Relu
}

fn default_aux_hidden() -> Vec<usize> {
    vec![8]
}

impl ArmedSpec {
    pub fn new(n_features: usize, n_clusters: usize) -> Self {
        Self {
            n_features,
            n_clusters,
            fe_hidden: default_fe_hidden(),
            fe_activation: default_fe_activation(),
            adv_hidden: default_aux_hidden(),
            zpred_hidden: default_aux_hidden(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segment {
    /// Fixed-effects subnet.
    Fe,
    /// Cluster adversary.
    Adv,
    /// Linear random-effects subnet.
    Re,
    /// Cluster-membership predictor.
    Zpred,
}

impl Segment {
    pub const ALL: [Segment; 4] = [Segment::Fe, Segment::Adv, Segment::Re, Segment::Zpred];

    fn index(self) -> usize {
        self as usize
    }
}

/// Layouts of the four subnetworks and their placement in one flat vector.
#[derive(Debug, PartialEq, Eq)]
pub struct ArmedLayout {
    spec: ArmedSpec,
    fe: Arc<Layout>,
    adv: Arc<Layout>,
    re: Arc<Layout>,
    zpred: Arc<Layout>,
    ranges: [Range<usize>; 4],
}

impl ArmedLayout {
    pub fn new(spec: ArmedSpec) -> Result<Self> {
        if spec.n_features == 0 || spec.n_clusters == 0 {
            return Err(Error::Config(
                "ARMED needs at least one feature and one cluster".into(),
            ));
        }
        let fe = NetworkSpec {
            input_dim: spec.n_features,
            hidden: spec.fe_hidden.clone(),
            hidden_activation: spec.fe_activation,
            output_dim: 1,
            head: Activation::Sigmoid,
        }
        .layout()?;
        let adv = NetworkSpec::multiclass(
            fe.representation_dim(),
            spec.adv_hidden.clone(),
            spec.n_clusters,
        )
        .layout()?;
        let re = Layout::chain(spec.n_clusters, &[(spec.n_features + 1, Activation::Identity)])?;
        let zpred =
            NetworkSpec::multiclass(spec.n_features, spec.zpred_hidden.clone(), spec.n_clusters)
                .layout()?;
        let lens = [fe.len(), adv.len(), re.len(), zpred.len()];
        let mut start = 0;
        let ranges = lens.map(|len| {
            let r = start..start + len;
            start += len;
            r
        });
        Ok(Self {
            spec,
            fe: Arc::new(fe),
            adv: Arc::new(adv),
            re: Arc::new(re),
            zpred: Arc::new(zpred),
            ranges,
        })
    }

    pub fn spec(&self) -> &ArmedSpec {
        &self.spec
    }

    pub fn n_features(&self) -> usize {
        self.spec.n_features
    }

    pub fn n_clusters(&self) -> usize {
        self.spec.n_clusters
    }

    pub fn layout(&self, seg: Segment) -> &Arc<Layout> {
        match seg {
            Segment::Fe => &self.fe,
            Segment::Adv => &self.adv,
            Segment::Re => &self.re,
            Segment::Zpred => &self.zpred,
        }
    }

    pub fn range(&self, seg: Segment) -> Range<usize> {
        self.ranges[seg.index()].clone()
    }

    pub fn len(&self) -> usize {
        self.ranges[3].end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All ARMED weights as one flat, addressable vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr<T>", into = "ParamsRepr<T>")]
#[serde(bound = "T: Scalar")]
pub struct ArmedParams<T> {
    layout: Arc<ArmedLayout>,
    values: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ParamsRepr<T> {
    spec: ArmedSpec,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<ParamsRepr<T>> for ArmedParams<T> {
    type Error = Error;

    fn try_from(r: ParamsRepr<T>) -> Result<Self> {
        let layout = Arc::new(ArmedLayout::new(r.spec)?);
        Self::from_values(layout, r.values)
    }
}

impl<T: Scalar> From<ArmedParams<T>> for ParamsRepr<T> {
    fn from(p: ArmedParams<T>) -> Self {
        ParamsRepr {
            spec: p.layout.spec.clone(),
            values: p.values,
        }
    }
}

impl<T: Scalar> ArmedParams<T> {
    pub fn zeros(layout: Arc<ArmedLayout>) -> Self {
        let values = vec![T::zero(); layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<ArmedLayout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Config(format!(
                "ARMED parameter vector has {} values, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Random FE and hidden weights; the random-effects subnet starts at zero
    /// and the adversary and Z-predictor heads start at zero, so both
    /// predict uniform membership before training.
    pub fn init<R: Rng + ?Sized>(layout: Arc<ArmedLayout>, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout.clone());
        for seg in [Segment::Fe, Segment::Adv, Segment::Zpred] {
            let l = layout.layout(seg).clone();
            let vals = p.segment_mut(seg);
            init_layers(&l, vals, rng);
            if seg != Segment::Fe {
                let head = l.depth() - 1;
                vals[l.layer_range(head)].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        p
    }

    pub fn layout(&self) -> &Arc<ArmedLayout> {
        &self.layout
    }

    pub fn spec(&self) -> &ArmedSpec {
        self.layout.spec()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, seg: Segment) -> &[T] {
        &self.values[self.layout.range(seg)]
    }

    pub fn segment_mut(&mut self, seg: Segment) -> &mut [T] {
        let r = self.layout.range(seg);
        &mut self.values[r]
    }

    /// Copy of one subnetwork as a standalone parameter vector.
    pub fn subnet(&self, seg: Segment) -> ParamVector<T> {
        ParamVector::from_values(self.layout.layout(seg).clone(), self.segment(seg).to_vec())
            .expect("segment length matches its layout")
    }

    pub fn set_segment(&mut self, seg: Segment, values: &[T]) -> Result<()> {
        let dst = self.segment_mut(seg);
        if dst.len() != values.len() {
            return Err(Error::Config(format!(
                "segment {seg:?} has {} values, got {}",
                dst.len(),
                values.len()
            )));
        }
        dst.copy_from_slice(values);
        Ok(())
    }

    pub fn copy_segment_from(&mut self, other: &Self, seg: Segment) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        self.set_segment(seg, other.segment(seg))
    }
}
