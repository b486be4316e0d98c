//! Small decoder-only causal transformer.

mod config;
mod forward;
mod geometry;
mod incremental;
pub mod io;
mod lora;
mod weights;

use std::borrow::Cow;
use std::ops::RangeInclusive;

pub use config::{ModelConfig, PositionalScheme, TokenId, TokenSequence};
pub use forward::RMS_EPS;
pub use incremental::{CandidateBatch, PrefixCache};
pub use lora::{AdapterSet, AdapterVar, AdapterVars, LoraAdapter, Projection};
pub use weights::{InitScales, LayerWeights, ModelWeights};

use crate::autodiff::{Graph, Var};
use crate::error::ModelError;
use crate::scalar::Real;
use crate::tensor::Tensor;
use forward::{block, Eager, Recorder};

/// Immutable model: config plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f64> {
    config: ModelConfig,
    weights: ModelWeights<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, weights: ModelWeights<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let named = weights
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let weights = ModelWeights::from_named(&config, named)?;
        Ok(Self { config, weights })
    }

    /// Builds a model without the distinct-embedding-row check; used for
    /// degenerate probes such as an all-zero embedding table.
    pub fn new_unchecked(config: ModelConfig, weights: ModelWeights<T>) -> Self {
        Self { config, weights }
    }

    pub fn random(config: ModelConfig, seed: u64, sigma_w: f64) -> Result<Self, ModelError> {
        let weights = ModelWeights::random_init(&config, seed, sigma_w)?;
        Ok(Self { config, weights })
    }

    pub fn random_scaled(config: ModelConfig, seed: u64, scales: InitScales) -> Result<Self, ModelError> {
        let weights = ModelWeights::random_init_scaled(&config, seed, scales)?;
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.config.layers
    }

    pub fn token_table(&self) -> &Tensor<T> {
        &self.weights.token_embedding
    }

    /// Token rows without positions.
    pub fn token_embeddings(&self, x: &TokenSequence) -> Result<Tensor<T>, ModelError> {
        x.validate(&self.config)?;
        Ok(self.weights.token_embedding.embedding_lookup(&x.as_indices())?)
    }

    /// Positional rows `0..len`.
    pub fn positions(&self, len: usize) -> Result<Tensor<T>, ModelError> {
        if len == 0 || len > self.config.max_seq_len {
            return Err(ModelError::SequenceLength {
                len,
                max: self.config.max_seq_len,
            });
        }
        Ok(self.weights.position_embedding.slice_rows(0, len)?)
    }

    /// `E(x)`: token row plus positional row for each position.
    pub fn embed(&self, x: &TokenSequence) -> Result<Tensor<T>, ModelError> {
        let tok = self.token_embeddings(x)?;
        Ok(tok.add(&self.positions(x.len())?)?)
    }

    fn check_range(&self, range: &RangeInclusive<usize>) -> Result<(), ModelError> {
        let (start, end) = (*range.start(), *range.end());
        if start == 0 || start > end || end > self.config.layers {
            return Err(ModelError::LayerRange {
                start,
                end,
                layers: self.config.layers,
            });
        }
        Ok(())
    }

    fn check_input(&self, v: &Tensor<T>) -> Result<(), ModelError> {
        if v.shape().len() != 2 || v.cols() != self.config.hidden {
            return Err(ModelError::Tensor(crate::error::TensorError::ShapeMismatch {
                op: "forward_layers",
                left: v.shape().to_vec(),
                right: vec![v.rows(), self.config.hidden],
            }));
        }
        if v.rows() == 0 || v.rows() > self.config.max_seq_len {
            return Err(ModelError::SequenceLength {
                len: v.rows(),
                max: self.config.max_seq_len,
            });
        }
        if !v.is_finite() {
            return Err(crate::error::TensorError::NonFinite { op: "forward_layers" }.into());
        }
        Ok(())
    }

    /// Applies blocks `range` (1-based, inclusive) to `v`.
    pub fn forward_layers(
        &self,
        v: &Tensor<T>,
        range: RangeInclusive<usize>,
        adapters: Option<&AdapterSet<T>>,
    ) -> Result<Tensor<T>, ModelError> {
        self.check_range(&range)?;
        self.check_input(v)?;
        let mut be = Eager { adapters };
        let mut x: Cow<'_, Tensor<T>> = Cow::Borrowed(v);
        for layer in range {
            x = block(&mut be, &self.weights.layers[layer - 1], layer, self.config.heads, &x)?;
        }
        Ok(x.into_owned())
    }

    /// Output of the first `boundary` blocks; `boundary == 0` is the identity.
    pub fn forward_to(
        &self,
        v: &Tensor<T>,
        boundary: usize,
        adapters: Option<&AdapterSet<T>>,
    ) -> Result<Tensor<T>, ModelError> {
        if boundary == 0 {
            self.check_input(v)?;
            return Ok(v.clone());
        }
        self.forward_layers(v, 1..=boundary, adapters)
    }

    /// Hidden states after `boundary` blocks for a token sequence.
    pub fn hidden_states(
        &self,
        x: &TokenSequence,
        boundary: usize,
        adapters: Option<&AdapterSet<T>>,
    ) -> Result<Tensor<T>, ModelError> {
        self.forward_to(&self.embed(x)?, boundary, adapters)
    }

    /// Records blocks `range` onto `g`, starting from node `v`.
    pub fn forward_layers_graph(
        &self,
        g: &mut Graph<T>,
        v: Var,
        range: RangeInclusive<usize>,
        adapters: Option<&AdapterVars<T>>,
    ) -> Result<Var, ModelError> {
        self.check_range(&range)?;
        self.check_input(g.value(v))?;
        let mut rec = Recorder { graph: g, adapters };
        let mut x = v;
        for layer in range {
            x = block(&mut rec, &self.weights.layers[layer - 1], layer, self.config.heads, &x)?;
        }
        Ok(x)
    }

    pub fn forward_to_graph(
        &self,
        g: &mut Graph<T>,
        v: Var,
        boundary: usize,
        adapters: Option<&AdapterVars<T>>,
    ) -> Result<Var, ModelError> {
        if boundary == 0 {
            self.check_input(g.value(v))?;
            return Ok(v);
        }
        self.forward_layers_graph(g, v, 1..=boundary, adapters)
    }

    /// Final RMS norm applied to a last-layer hidden state.
    pub fn final_hidden(&self, hidden: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        Ok(hidden.rmsnorm(&self.weights.final_norm, T::lit(RMS_EPS))?)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            weights: self.weights.cast(),
        }
    }
}
