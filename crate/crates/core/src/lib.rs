//! Toolkit for scoring explanation methods by k-fold cross-training:
//! relative consistency (ReCo), mean generalizability (MeGe), plus the
//! fidelity and stability baselines, over gradient attributions of small
//! classifiers trained here.

pub mod archive;
pub mod attribution;
pub mod container;
pub mod crosstrain;
pub mod datasets;
pub mod degradation;
pub mod distance;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sanity;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use tensor::Tensor;
