//! Network description, parameters, forward/backward passes and the weight
//! file format.

mod config;
mod network;
mod weights;
pub mod weights_file;

pub use config::{Activation, ConfigError, LayerShape, LayerSpec, NetworkConfig, ShapeTable};
pub use network::{
    backward, backward_normalized, forward, forward_normalized, normalize_input, predict,
    ActivationTrace, Backward, SteeringOutput,
};
pub use weights::{InitScheme, LayerParams, WeightSet};
pub use weights_file::{load_weights, save_weights, WeightFileError};

use crate::tensor::ShapeError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("input value {value} at index {index} is outside [0, 255]")]
    InputRange { index: usize, value: f32 },
    #[error("input dims {actual:?} do not match config {expected:?}")]
    InputDims {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("weight set has {actual} layers, config has {expected}")]
    LayerCount { expected: usize, actual: usize },
    #[error("layer {layer}: {what} length {actual}, expected {expected}")]
    ParamLength {
        layer: usize,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("activation trace does not match config: {0}")]
    TraceMismatch(String),
}
