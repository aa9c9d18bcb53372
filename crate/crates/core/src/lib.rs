//! Small CPU deep-learning engine and experiment toolkit for hierarchical
//! transfer CNNs: several shallow networks are trained independently, their
//! first convolutional layers are transplanted side by side into the first
//! layer of a deeper network, and the deeper network is fine-tuned and
//! compared against a plainly initialized twin.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod transfer;
pub mod zoo;

pub use error::{Error, Result};
pub use model::{Layer, ModelGraph, Params};
pub use tensor::Tensor;
