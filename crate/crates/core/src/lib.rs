pub mod cli;
pub mod fsutil;
pub mod harness;
pub mod model;
pub mod pnm;
pub mod saliency;
pub mod tensor;
pub mod training;

pub use tensor::{ConvGeometry, ShapeError, Tensor};
