pub mod armed;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod simdata;
pub mod stats;
pub mod uq;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;
