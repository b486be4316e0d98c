//! Prompt inversion from intermediate transformer activations.
//!
//! White-box: optimize a continuous embedding whose forward pass matches the
//! observed activation, then discretize it token by token. Grey-box:
//! alternate that with gradient steps on estimated LoRA adapters.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod discretize;
pub mod error;
pub mod greybox;
pub mod invert;
pub mod optimize;
pub mod oracle;
pub mod relax;
pub mod target;

pub use config::AttackConfig;
pub use discretize::{
    adaptive_discretize, exhaustive_discretize, naive_discretize, CandidateStats, Diagnostics, DiscretizeOptions,
    PositionDiagnostics,
};
pub use error::AttackError;
pub use greybox::{
    adapter_loss, adapter_step, alternating_invert, initial_adapters, AdapterGrads, AdapterStep, GreyboxConfig,
    GreyboxState,
};
pub use invert::{invert, invert_many, AttackOutcome, Discretizer, Optimizer};
pub use optimize::{
    constrained_optimize, initial_embedding, naive_optimize, objective, optimize_embedding, Objective, OptimizeOptions,
    OptimizedEmbedding,
};
pub use oracle::{semantic_candidates, BigramOracle, NextTokenScorer};
pub use relax::{
    gradient_vanishing_probe, softmax_relax_optimize, ProbeConfig, RelaxConfig, RelaxInit, RelaxResult, VanishingReport,
};
pub use target::Target;

pub type Target64<'m> = Target<'m, f64>;
pub type Target32<'m> = Target<'m, f32>;
pub type OptimizedEmbedding64 = OptimizedEmbedding<f64>;
pub type OptimizedEmbedding32 = OptimizedEmbedding<f32>;
pub type GreyboxState64 = GreyboxState<f64>;
pub type GreyboxState32 = GreyboxState<f32>;
