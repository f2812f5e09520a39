//! Object-centric deep Q-learning with inter-object attention and a
//! contrastive object-dynamics auxiliary loss, trained on a deterministic
//! grid-world kitchen.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod agent;
pub mod config;
pub mod objmodel;
pub mod probe;
pub mod report;
pub mod scalar;
pub mod sim;
pub mod tensor;
pub mod train;

pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type ParamGroup64 = tensor::ParamGroup<f64>;
pub type ParamGroup32 = tensor::ParamGroup<f32>;
