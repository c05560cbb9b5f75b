//! Hybrid three-branch convolutional network for binary image
//! classification, with its training, evaluation and feature-export
//! pipeline.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod gradcheck;
pub mod metrics;
pub mod ml;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};
