//! MDMixer: multi-granularity trend/seasonal mixing for long-term multivariate
//! time-series forecasting.
//!
//! The pipeline per forward pass is
//! instance normalization → moving-average decomposition → patch embedding
//! per branch → parallel multi-granularity heads → coarse-to-fine mixing →
//! linear upsampling → channel-adaptive gated fusion → denormalization.
//!
//! All arithmetic is generic over [`Scalar`]; training runs at `f32` and
//! gradient checking runs the same code at `f64`.

pub mod baselines;
pub mod checkpoint;
pub mod data;
mod error;
pub mod evaluation;
pub mod model;
pub mod preprocess;
mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
