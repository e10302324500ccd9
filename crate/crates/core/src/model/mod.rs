//! The MDMixer network: configuration, parameters, layer primitives and the
//! forward/backward passes.

mod config;
pub mod layers;
mod network;
mod params;

pub use config::{ModelConfig, PosEncoding};
pub use layers::granularity_schedule;
pub use network::{ForecastOutput, ForwardTrace, MdMixer};
pub use params::{init_params, MlpHead, ParamSet};
