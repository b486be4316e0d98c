//! Recovery metrics. All return values lie in `[0, 1]`.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::EvalError;

/// Fraction of positions of `x` where `x_hat` holds the same token.
/// Positions beyond `x_hat`'s end count as misses.
pub fn token_accuracy<T: PartialEq>(x: &[T], x_hat: &[T]) -> Result<f64, EvalError> {
    if x.is_empty() {
        return Err(EvalError::Empty("reference sequence"));
    }
    let hits = x.iter().zip(x_hat).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / x.len() as f64)
}

fn ngram_counts<T: Eq + Hash>(s: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for w in s.windows(n) {
        *m.entry(w).or_default() += 1;
    }
    m
}

/// Sentence BLEU up to 4-grams with uniform weights and a brevity penalty.
///
/// Orders 2..4 use add-one smoothing `(m + 1) / (t + 1)` where `m` is the
/// clipped match count and `t` the number of hypothesis n-grams, which
/// agrees with NLTK's `sentence_bleu` under `method2` smoothing. Orders the
/// hypothesis is too short to contain contribute a precision of 1 (NLTK
/// uses 1/2), so `bleu(x, x) = 1` for every nonempty `x`. No unigram
/// overlap, or an empty hypothesis, scores 0.
pub fn bleu<T: Eq + Hash>(reference: &[T], hypothesis: &[T]) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::Empty("reference sequence"));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let matched: usize = hyp.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
        let total = hypothesis.len().saturating_sub(n - 1);
        let p = if total == 0 {
            1.0
        } else if n == 1 {
            if matched == 0 {
                return Ok(0.0);
            }
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((bp * log_sum.exp()).clamp(0.0, 1.0))
}

/// Fraction of keyword spans `(start, len)` of `x` reproduced exactly at the
/// same positions in `x_hat`; `None` without keywords.
pub fn keyword_recall<T: PartialEq>(x: &[T], x_hat: &[T], keywords: &[(usize, usize)]) -> Option<f64> {
    if keywords.is_empty() {
        return None;
    }
    let hit = keywords
        .iter()
        .filter(|&&(s, l)| {
            let e = s + l;
            e <= x.len() && x_hat.get(s..e).is_some_and(|h| h == &x[s..e])
        })
        .count();
    Some(hit as f64 / keywords.len() as f64)
}
