//! Queries over the token-embedding table. Distances are taken in token
//! space, without the positional term.

use std::cmp::Ordering;

use super::config::TokenId;
use super::Model;
use crate::scalar::Real;
use crate::tensor::{dist_sq, Tensor};

impl<T: Real> Model<T> {
    /// Per-dimension minimum and maximum over all token-embedding rows.
    pub fn embedding_bounds(&self) -> (Tensor<T>, Tensor<T>) {
        embedding_bounds(self.token_table())
    }

    /// The `k` tokens closest to `v` (ascending distance, ties to the smaller
    /// id). `k` is clamped to the vocabulary size.
    pub fn nearest_tokens(&self, v: &[T], k: usize) -> Vec<TokenId> {
        nearest_tokens(self.token_table(), v, k)
    }
}

pub fn embedding_bounds<T: Real>(table: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let h = table.cols();
    let mut lo = vec![T::infinity(); h];
    let mut hi = vec![T::neg_infinity(); h];
    for t in 0..table.rows() {
        for (j, &v) in table.row(t).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (
        Tensor::new(vec![h], lo).expect("length h"),
        Tensor::new(vec![h], hi).expect("length h"),
    )
}

pub fn nearest_tokens<T: Real>(table: &Tensor<T>, v: &[T], k: usize) -> Vec<TokenId> {
    let mut scored: Vec<(T, usize)> = (0..table.rows()).map(|t| (dist_sq(v, table.row(t)), t)).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(k.min(table.rows()))
        .map(|(_, t)| t as TokenId)
        .collect()
}
