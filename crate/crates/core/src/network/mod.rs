//! The model: analysis and synthesis transforms, hyper-transforms,
//! attention blocks, and the two masked-context parameter heads.
//!
//! Weights live in [`ModelWeights`], a key-addressed map whose key set is a
//! function of [`ModelConfig`]. Training and full-tensor inference bind them
//! into a [`Network`]; the decoder's one-location-at-a-time path goes
//! through [`params_y_at`] and [`params_x_at`].

mod config;
mod model;
mod params;
mod weights;

#[cfg(test)]
mod tests;

pub use config::{ModelConfig, MODEL_KEYS};
pub use model::{GmmVars, Network};
pub use params::{params_x_at, params_y_at, GmmParams, LocationParams};
pub use weights::{param_specs, Init, ModelWeights, ParamSpec};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("model config: {0}")]
    Config(String),
    #[error("weights do not match the config: {0}")]
    Keys(String),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
