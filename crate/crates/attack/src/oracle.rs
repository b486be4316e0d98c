//! Next-token scorers used to propose semantic candidates.

use std::cmp::Ordering;

use pia_core::TokenId;
use serde::{Deserialize, Serialize};

pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;

    /// Probability of `next` following `prefix`; sums to 1 over the vocabulary.
    fn prob(&self, prefix: &[TokenId], next: TokenId) -> f64;
}

/// Add-one-smoothed bigram model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramOracle {
    vocab: usize,
    /// `counts[prev * vocab + next]`
    counts: Vec<u32>,
    totals: Vec<u32>,
}

impl BigramOracle {
    pub fn new(vocab: usize) -> Self {
        Self {
            vocab,
            counts: vec![0; vocab * vocab],
            totals: vec![0; vocab],
        }
    }

    /// Counts adjacent pairs in every sequence; ids outside the vocabulary are
    /// skipped.
    pub fn train<'a>(vocab: usize, sequences: impl IntoIterator<Item = &'a [TokenId]>) -> Self {
        let mut o = Self::new(vocab);
        for seq in sequences {
            for w in seq.windows(2) {
                let (a, b) = (w[0] as usize, w[1] as usize);
                if a < vocab && b < vocab {
                    o.counts[a * vocab + b] += 1;
                    o.totals[a] += 1;
                }
            }
        }
        o
    }

    pub fn count(&self, prev: TokenId, next: TokenId) -> u32 {
        self.counts[prev as usize * self.vocab + next as usize]
    }
}

impl NextTokenScorer for BigramOracle {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn prob(&self, prefix: &[TokenId], next: TokenId) -> f64 {
        let v = self.vocab as f64;
        match prefix.last() {
            Some(&p) if (p as usize) < self.vocab && (next as usize) < self.vocab => {
                (self.count(p, next) as f64 + 1.0) / (self.totals[p as usize] as f64 + v)
            }
            _ => 1.0 / v,
        }
    }
}

/// Top-`y` next tokens by oracle probability (ties to the smaller id). Empty
/// for an empty prefix or `y == 0`.
pub fn semantic_candidates(oracle: &dyn NextTokenScorer, prefix: &[TokenId], y: usize) -> Vec<TokenId> {
    if y == 0 || prefix.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<(f64, TokenId)> = (0..oracle.vocab_size() as TokenId)
        .map(|t| (oracle.prob(prefix, t), t))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.into_iter().take(y).map(|(_, t)| t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // "a b a b" with a=0, b=1 in a 3-token vocabulary.
    fn abab() -> BigramOracle {
        BigramOracle::train(3, [&[0u32, 1, 0, 1][..]])
    }

    #[test]
    fn bigram_counts() {
        let o = abab();
        assert_eq!(o.count(0, 1), 2);
        assert_eq!(o.count(1, 0), 1);
        assert_eq!(o.prob(&[0], 1), 3.0 / 5.0);
        assert_eq!(o.prob(&[0], 0), 1.0 / 5.0);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let o = abab();
        for prev in 0..3 {
            let s: f64 = (0..3).map(|t| o.prob(&[prev], t)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn top_one_after_a_is_b() {
        assert_eq!(semantic_candidates(&abab(), &[0], 1), vec![1]);
    }

    #[test]
    fn empty_cases() {
        let o = abab();
        assert!(semantic_candidates(&o, &[0], 0).is_empty());
        assert!(semantic_candidates(&o, &[], 3).is_empty());
    }

    #[test]
    fn unseen_prefix_ties_to_smaller_ids() {
        // Token 2 never occurs first, so all continuations are equally likely.
        assert_eq!(semantic_candidates(&abab(), &[2], 2), vec![0, 1]);
    }
}
