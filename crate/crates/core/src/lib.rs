//! Learned video compression with an autoregressive entropy model and
//! factorized spatial / spatio-temporal adversarial training.

pub mod adversarial;
pub mod archive;
pub mod autograd;
pub mod codec;
pub mod config;
pub mod data;
pub mod distortion;
pub mod entropy;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
