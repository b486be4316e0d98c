//! Evaluating one extra position on top of a fixed prefix.
//!
//! Greedy discretisation scores many candidate tokens for the same position
//! against the same prefix. Caching the prefix's per-layer keys and values
//! turns each candidate into a single-row pass. Because every kernel is
//! row-wise with a fixed reduction order, the row produced here is
//! bit-identical to the same row of a full forward pass.

use std::borrow::Cow;

use super::forward::{mlp_residual, project, Backend, Eager};
use super::lora::{AdapterSet, Projection};
use super::Model;
use crate::error::ModelError;
use crate::scalar::Real;
use crate::tensor::{attend_row, Tensor};

/// Per-layer keys and values of an accepted prefix.
#[derive(Debug, Clone)]
pub struct PrefixCache<T: Real = f64> {
    boundary: usize,
    hidden: usize,
    len: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

/// Outputs of a batch of candidate rows plus the per-layer keys/values
/// needed to append any one of them to the prefix.
#[derive(Debug, Clone)]
pub struct CandidateBatch<T: Real = f64> {
    /// `c × h` rows after `boundary` blocks.
    pub outputs: Tensor<T>,
    keys: Vec<Tensor<T>>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> PrefixCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn boundary(&self) -> usize {
        self.boundary
    }

    /// Appends candidate `idx` of `batch` to the prefix.
    pub fn push(&mut self, batch: &CandidateBatch<T>, idx: usize) {
        for l in 0..self.boundary {
            self.keys[l].extend_from_slice(batch.keys[l].row(idx));
            self.values[l].extend_from_slice(batch.values[l].row(idx));
        }
        self.len += 1;
    }
}

impl<T: Real> Model<T> {
    /// Empty prefix for evaluating the first `boundary` blocks.
    pub fn prefix_cache(&self, boundary: usize) -> Result<PrefixCache<T>, ModelError> {
        if boundary > self.config.layers {
            return Err(ModelError::LayerRange {
                start: 1,
                end: boundary,
                layers: self.config.layers,
            });
        }
        Ok(PrefixCache {
            boundary,
            hidden: self.config.hidden,
            len: 0,
            keys: vec![Vec::new(); boundary],
            values: vec![Vec::new(); boundary],
        })
    }

    /// Runs each row of `inputs` (already including the positional term for
    /// position `cache.len()`) as the next token after the cached prefix.
    pub fn extend_candidates(
        &self,
        cache: &PrefixCache<T>,
        inputs: &Tensor<T>,
        adapters: Option<&AdapterSet<T>>,
    ) -> Result<CandidateBatch<T>, ModelError> {
        let h = self.config.hidden;
        if inputs.shape().len() != 2 || inputs.cols() != h || cache.hidden != h {
            return Err(crate::error::TensorError::ShapeMismatch {
                op: "extend_candidates",
                left: inputs.shape().to_vec(),
                right: vec![inputs.rows(), h],
            }
            .into());
        }
        if cache.len >= self.config.max_seq_len {
            return Err(ModelError::SequenceLength {
                len: cache.len + 1,
                max: self.config.max_seq_len,
            });
        }
        let heads = self.config.heads;
        let hd = h / heads;
        let pos = cache.len;
        let c = inputs.rows();
        let mut be = Eager { adapters };
        let mut x: Cow<'_, Tensor<T>> = Cow::Borrowed(inputs);
        let mut keys = Vec::with_capacity(cache.boundary);
        let mut values = Vec::with_capacity(cache.boundary);
        let mut probs = vec![T::zero(); pos + 1];
        for l in 0..cache.boundary {
            let layer = l + 1;
            let lw = &self.weights.layers[l];
            let gain = be.weight(&lw.attn_norm);
            let n = be.rmsnorm(&x, &gain)?;
            let q = project(&mut be, lw, layer, Projection::Query, &n)?;
            let k = project(&mut be, lw, layer, Projection::Key, &n)?;
            let v = project(&mut be, lw, layer, Projection::Value, &n)?;
            let ck = &cache.keys[l];
            let cv = &cache.values[l];
            let mut att = vec![T::zero(); c * h];
            for cand in 0..c {
                let kc = k.row(cand);
                let vc = v.row(cand);
                for head in 0..heads {
                    let cols = head * hd..(head + 1) * hd;
                    attend_row(
                        &q.row(cand)[cols.clone()],
                        |j| {
                            if j < pos {
                                &ck[j * h + head * hd..j * h + (head + 1) * hd]
                            } else {
                                &kc[cols.clone()]
                            }
                        },
                        |j| {
                            if j < pos {
                                &cv[j * h + head * hd..j * h + (head + 1) * hd]
                            } else {
                                &vc[cols.clone()]
                            }
                        },
                        pos,
                        &mut probs,
                        &mut att[cand * h + head * hd..cand * h + (head + 1) * hd],
                    );
                }
            }
            let att: Cow<'_, Tensor<T>> = Cow::Owned(Tensor::new(vec![c, h], att)?);
            let o = project(&mut be, lw, layer, Projection::Output, &att)?;
            let mid = be.add(&x, &o)?;
            x = mlp_residual(&mut be, lw, layer, &mid)?;
            keys.push(k.into_owned());
            values.push(v.into_owned());
        }
        Ok(CandidateBatch {
            outputs: x.into_owned(),
            keys,
            values,
        })
    }
}
