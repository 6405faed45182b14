//! Adversarially regularized mixed-effects networks.

mod model;
mod params;
mod train;

pub use model::{
    adversary_forward, armed_loss, effect_gradient, fe_forward, mixed_forward,
    mixed_forward_masked, zpred_forward, Effect, LossBreakdown, LossWeights, MixedPrediction,
    Workspace,
};
pub use params::{ArmedLayout, ArmedParams, ArmedSpec, Segment};
pub use train::{
    run_training, train_armed, train_zpredictor, Alternation, EpochRecord, Optimizer,
    PointModel, Samples, TrainConfig, TrainHistory, UpdateGroup, WeightModel, ZpredConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::Matrix;
use crate::nn::DropoutMask;
use crate::scalar::Scalar;

/// How membership is supplied for rows from clusters unseen in training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnseenMode {
    /// Soft membership from the Z-predictor.
    #[default]
    SoftMembership,
    /// Use the fixed-effects prediction as the mixed prediction.
    FixedOnly,
}

/// Dropout masks for the FE subnet and the Z-predictor.
#[derive(Clone, Copy, Debug, Default)]
pub struct Masks<'a> {
    pub fe: Option<&'a DropoutMask>,
    pub zpred: Option<&'a DropoutMask>,
}

/// Predictions for rows whose cluster was not seen in training.
pub fn predict_unseen<T: Scalar>(
    p: &ArmedParams<T>,
    x: &Matrix<T>,
    mode: UnseenMode,
    masks: Masks<'_>,
) -> Result<MixedPrediction<T>> {
    match mode {
        UnseenMode::SoftMembership => {
            let z = zpred_forward(p, x, masks.zpred)?;
            mixed_forward_masked(p, x, &z, masks.fe)
        }
        UnseenMode::FixedOnly => {
            let zeros = Matrix::zeros(x.rows(), p.layout().n_clusters());
            let mut out = mixed_forward_masked(p, x, &zeros, masks.fe)?;
            out.y_m.clone_from(&out.y_f);
            out.eta_m.clone_from(&out.eta_f);
            out.h_r = x.clone();
            Ok(out)
        }
    }
}
