use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub type TokenId = u32;

/// How positions enter the residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScheme {
    #[default]
    LearnedAbsolute,
}

impl PositionalScheme {
    pub(crate) fn tag(self) -> u32 {
        match self {
            Self::LearnedAbsolute => 0,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Self::LearnedAbsolute),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_multiple: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub positional: PositionalScheme,
}

impl ModelConfig {
    /// The desk-scale model used throughout the tests: |V|=64, h=32, d=8.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 64,
            hidden: 32,
            layers: 8,
            heads: 4,
            mlp_multiple: 4,
            max_seq_len: 64,
            positional: PositionalScheme::LearnedAbsolute,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn mlp_hidden(&self) -> usize {
        self.hidden * self.mlp_multiple
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be a positive multiple of heads");
        }
        if self.mlp_multiple == 0 {
            return bad("mlp_multiple must be positive");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A prompt or recovered prompt as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_indices(&self) -> Vec<usize> {
        self.0.iter().map(|&t| t as usize).collect()
    }

    /// Checks the id range and the length bounds for `cfg`.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        if self.0.is_empty() || self.0.len() > cfg.max_seq_len {
            return Err(ModelError::SequenceLength {
                len: self.0.len(),
                max: cfg.max_seq_len,
            });
        }
        if let Some(&id) = self.0.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: cfg.vocab_size,
            });
        }
        Ok(())
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}
