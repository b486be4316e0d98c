//! Plain-text corpora with keyword annotations.
//!
//! A corpus is a text file with one document per line. Keywords live in a
//! JSON sidecar: `{"keywords": [[{"start": 3, "text": "new york"}], ...]}`,
//! one list per document, where `start` is a word index.

use std::path::Path;

use pia_core::model::TokenSequence;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::tokenizer::{words, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub start: usize,
    pub text: String,
}

impl Keyword {
    pub fn len(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub text: String,
    pub keywords: Vec<Keyword>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

#[derive(Serialize, Deserialize)]
struct KeywordFile {
    keywords: Vec<Vec<Keyword>>,
}

/// A corpus document cut down to an attack prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub document: usize,
    /// `<bos>` followed by the document's first words.
    pub tokens: TokenSequence,
    /// `(start, len)` token spans in `tokens` of keywords that survived
    /// truncation.
    pub keywords: Vec<(usize, usize)>,
}

impl Corpus {
    /// Builds a corpus, checking every keyword occurs verbatim at its span.
    pub fn new(texts: Vec<String>, keywords: Option<Vec<Vec<Keyword>>>) -> Result<Self, EvalError> {
        let keywords = match keywords {
            Some(k) if k.len() != texts.len() => {
                return Err(EvalError::Corpus(format!(
                    "{} keyword lists for {} documents",
                    k.len(),
                    texts.len()
                )))
            }
            Some(k) => k,
            None => vec![Vec::new(); texts.len()],
        };
        let documents = texts
            .into_iter()
            .zip(keywords)
            .enumerate()
            .map(|(i, (text, keywords))| {
                let ws: Vec<String> = words(&text).collect();
                for k in &keywords {
                    let kw: Vec<String> = words(&k.text).collect();
                    let found = ws.get(k.start..k.start + kw.len());
                    if kw.is_empty() || found != Some(&kw[..]) {
                        return Err(EvalError::Corpus(format!(
                            "document {i}: keyword {:?} not found at word {}",
                            k.text, k.start
                        )));
                    }
                }
                Ok(Document { text, keywords })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { documents })
    }

    /// Reads one document per non-empty line, plus an optional keyword sidecar.
    pub fn load(text: &Path, keywords: Option<&Path>) -> Result<Self, EvalError> {
        let raw = std::fs::read_to_string(text).map_err(EvalError::io(text))?;
        let texts = raw
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        let kws = match keywords {
            Some(p) => {
                let s = std::fs::read_to_string(p).map_err(EvalError::io(p))?;
                Some(serde_json::from_str::<KeywordFile>(&s)?.keywords)
            }
            None => None,
        };
        Self::new(texts, kws)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.text.as_str())
    }

    /// Truncates document `index` to `max_words` words behind `<bos>`.
    pub fn prompt(&self, index: usize, tokenizer: &Tokenizer, max_words: usize) -> Result<Prompt, EvalError> {
        let doc = self
            .documents
            .get(index)
            .ok_or_else(|| EvalError::Corpus(format!("no document {index}")))?;
        let tokens = tokenizer.encode_prompt(&doc.text, max_words);
        let words = tokens.len() - 1;
        let keywords = doc
            .keywords
            .iter()
            .filter(|k| k.start + k.len() <= words)
            .map(|k| (k.start + 1, k.len()))
            .collect();
        Ok(Prompt {
            id: format!("doc{index:04}"),
            document: index,
            tokens,
            keywords,
        })
    }

    /// `count` distinct documents drawn with a seeded generator, in draw order.
    pub fn sample_indices(&self, count: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
        if count > self.len() {
            return Err(EvalError::Config(format!(
                "asked for {count} prompts from {} documents",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(sample(&mut rng, self.len(), count).into_vec())
    }
}
