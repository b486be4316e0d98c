//! Whitespace tokenizer with a frequency-capped vocabulary.

use std::collections::HashMap;
use std::path::Path;

use pia_core::model::{TokenId, TokenSequence};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;

pub const BOS: &str = "<bos>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;

/// Lowercased whitespace words of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    vocab: Vec<String>,
}

impl From<Tokenizer> for VocabFile {
    fn from(t: Tokenizer) -> Self {
        Self { vocab: t.vocab }
    }
}

impl TryFrom<VocabFile> for Tokenizer {
    type Error = EvalError;

    fn try_from(f: VocabFile) -> Result<Self, EvalError> {
        Self::from_vocab(f.vocab)
    }
}

impl Tokenizer {
    /// Keeps the `vocab_size − 2` most frequent words (ties broken
    /// alphabetically) after the reserved `<bos>` and `<unk>`.
    pub fn build<'a>(documents: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Self, EvalError> {
        if vocab_size < 3 {
            return Err(EvalError::Config(format!(
                "vocab size {vocab_size} leaves no room for words"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in documents {
            for w in words(doc) {
                *counts.entry(w).or_default() += 1;
            }
        }
        counts.remove(BOS);
        counts.remove(UNK);
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let vocab = [BOS.to_owned(), UNK.to_owned()]
            .into_iter()
            .chain(ranked.into_iter().take(vocab_size - 2).map(|(w, _)| w))
            .collect();
        Self::from_vocab(vocab)
    }

    pub fn from_vocab(vocab: Vec<String>) -> Result<Self, EvalError> {
        if vocab.first().map(String::as_str) != Some(BOS) || vocab.get(1).map(String::as_str) != Some(UNK) {
            return Err(EvalError::Config(format!("vocabulary must start with {BOS} and {UNK}")));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i as TokenId).is_some() {
                return Err(EvalError::Config(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self { vocab, index })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        words(text).map(|w| self.id(&w)).collect()
    }

    /// `<bos>` followed by at most `max_words` tokens of `text`.
    pub fn encode_prompt(&self, text: &str, max_words: usize) -> TokenSequence {
        let ids = std::iter::once(BOS_ID)
            .chain(self.encode(text).into_iter().take(max_words))
            .collect();
        TokenSequence::new(ids)
    }

    /// Space-joined words; ids outside the vocabulary render as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.vocab.get(i as usize).map_or(UNK, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabFile::from(self.clone())).expect("vocabulary serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json()).map_err(EvalError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let s = std::fs::read_to_string(path).map_err(EvalError::io(path))?;
        Ok(serde_json::from_str(&s)?)
    }
}
