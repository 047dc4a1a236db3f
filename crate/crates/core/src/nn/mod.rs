//! Small neural-network engine: layers, per-sample reverse-mode
//! differentiation and SGD training.

mod layer;
mod model;
pub mod serialize;
mod train;

pub use layer::Layer;
pub use model::{Architecture, ForwardTrace, Model, ParamSet};
pub use train::{accuracy, predictions, train, TrainConfig, TrainReport};
