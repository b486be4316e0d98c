//! Tensors, reverse-mode autodiff, a small causal transformer, and a
//! simulated collaborative-inference pipeline.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the common choices.

pub mod autodiff;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{ModelError, PipelineError, TensorError};
pub use model::{AdapterSet, LoraAdapter, Model, ModelConfig, ModelWeights, Projection, TokenId, TokenSequence};
pub use pipeline::{ActivationRecord, DefenseConfig, PartitionPlan};
pub use scalar::Real;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type AdapterSet64 = AdapterSet<f64>;
pub type AdapterSet32 = AdapterSet<f32>;
pub type ActivationRecord64 = ActivationRecord<f64>;
pub type ActivationRecord32 = ActivationRecord<f32>;
