//! Mapping an optimized embedding back to tokens.

use std::cmp::Ordering;

use pia_core::model::{Model, TokenSequence};
use pia_core::tensor::dist_sq;
use pia_core::{Real, Tensor, TokenId};
use serde::{Deserialize, Serialize};

use crate::error::AttackError;
use crate::oracle::{semantic_candidates, NextTokenScorer};
use crate::target::Target;

/// Nearest token-embedding row for every row of `u` (ties to the smaller id).
pub fn naive_discretize<T: Real>(model: &Model<T>, u: &Tensor<T>) -> TokenSequence {
    TokenSequence::new((0..u.rows()).map(|i| model.nearest_tokens(u.row(i), 1)[0]).collect())
}

/// What happened at one position of adaptive discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionDiagnostics {
    pub position: usize,
    pub embedding_candidates: Vec<TokenId>,
    pub semantic_candidates: Vec<TokenId>,
    /// Union of both sets in ascending id order.
    pub candidates: Vec<TokenId>,
    /// `‖F(…, t)_j − A_j‖` for each entry of `candidates`.
    pub distances: Vec<f64>,
    pub chosen: TokenId,
    pub truth: Option<TokenId>,
    pub truth_in_embedding: Option<bool>,
    pub truth_in_semantic: Option<bool>,
    pub truth_in_union: Option<bool>,
}

impl PositionDiagnostics {
    pub fn chose_truth(&self) -> Option<bool> {
        self.truth.map(|t| t == self.chosen)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub positions: Vec<PositionDiagnostics>,
}

/// Candidate-set hit rates over positions with known ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub positions: usize,
    pub truth_in_embedding: f64,
    pub truth_in_semantic: f64,
    pub truth_in_union: f64,
    /// `P(chosen = truth | truth ∈ S_e ∪ S_s)`; `None` when the union never
    /// contained the truth.
    pub chosen_given_union: Option<f64>,
}

impl CandidateStats {
    pub fn from_diagnostics<'a>(diags: impl IntoIterator<Item = &'a Diagnostics>) -> Self {
        let mut n = 0usize;
        let (mut e, mut s, mut u, mut cu) = (0usize, 0usize, 0usize, 0usize);
        for d in diags {
            for p in &d.positions {
                let Some(truth) = p.truth else { continue };
                n += 1;
                e += p.truth_in_embedding.unwrap_or(false) as usize;
                s += p.truth_in_semantic.unwrap_or(false) as usize;
                if p.truth_in_union.unwrap_or(false) {
                    u += 1;
                    cu += (p.chosen == truth) as usize;
                }
            }
        }
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Self {
            positions: n,
            truth_in_embedding: frac(e),
            truth_in_semantic: frac(s),
            truth_in_union: frac(u),
            chosen_given_union: (u > 0).then(|| cu as f64 / u as f64),
        }
    }
}

impl Diagnostics {
    pub fn stats(&self) -> CandidateStats {
        CandidateStats::from_diagnostics([self])
    }
}

/// Inputs to [`adaptive_discretize`] beyond the embedding and activation.
#[derive(Clone, Copy, Default)]
pub struct DiscretizeOptions<'o> {
    pub top_k: usize,
    pub top_y: usize,
    pub oracle: Option<&'o dyn NextTokenScorer>,
    pub bos: Option<TokenId>,
    /// Ground truth, only used to fill diagnostics.
    pub truth: Option<&'o TokenSequence>,
}

/// Greedy left-to-right calibration: at position `j` each candidate from the
/// `top_k` tokens nearest `û_j` and the oracle's `top_y` continuations is
/// appended to the recovered prefix, and the one whose activation row is
/// closest to `A_j` wins (ties to the smaller id).
pub fn adaptive_discretize<T: Real>(
    target: &Target<'_, T>,
    u: &Tensor<T>,
    a: &Tensor<T>,
    opts: &DiscretizeOptions<'_>,
) -> Result<(TokenSequence, Diagnostics), AttackError> {
    if opts.top_k + opts.top_y == 0 {
        return Err(AttackError::Config("top_k + top_y must be >= 1".into()));
    }
    if u.shape() != a.shape() {
        return Err(AttackError::Activation {
            got: u.rows(),
            width: u.cols(),
            expected: a.cols(),
        });
    }
    calibrate(target, a, opts.bos, opts.truth, |j, prefix| {
        let se = if opts.top_k > 0 {
            target.model.nearest_tokens(u.row(j), opts.top_k)
        } else {
            Vec::new()
        };
        let ss = match opts.oracle {
            Some(o) => semantic_candidates(o, prefix, opts.top_y),
            None => Vec::new(),
        };
        (se, ss)
    })
}

/// Calibration over the whole vocabulary at every position.
pub fn exhaustive_discretize<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    bos: Option<TokenId>,
) -> Result<TokenSequence, AttackError> {
    let all: Vec<TokenId> = (0..target.model.vocab_size() as TokenId).collect();
    Ok(calibrate(target, a, bos, None, |_, _| (all.clone(), Vec::new()))?.0)
}

fn calibrate<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    bos: Option<TokenId>,
    truth: Option<&TokenSequence>,
    mut candidates: impl FnMut(usize, &[TokenId]) -> (Vec<TokenId>, Vec<TokenId>),
) -> Result<(TokenSequence, Diagnostics), AttackError> {
    let model = target.model;
    let len = target.prompt_len(a)?;
    if let Some(t) = truth {
        if t.len() != len {
            return Err(AttackError::Config(format!(
                "ground truth has {} tokens, activation has {len} rows",
                t.len()
            )));
        }
    }
    let positions = model.positions(len)?;
    let table = model.token_table();
    let mut cache = model.prefix_cache(target.boundary)?;
    let mut chosen: Vec<TokenId> = Vec::with_capacity(len);
    let mut diags = Diagnostics::default();
    for j in 0..len {
        let (se, ss, union) = match (j, bos) {
            (0, Some(b)) => (Vec::new(), Vec::new(), vec![b]),
            _ => {
                let (se, ss) = candidates(j, &chosen);
                let mut union: Vec<TokenId> = se.iter().chain(&ss).copied().collect();
                union.sort_unstable();
                union.dedup();
                if union.is_empty() {
                    // Only possible at position 0 with no embedding candidates.
                    union = model.nearest_tokens(&vec![T::zero(); model.hidden()], 1);
                }
                (se, ss, union)
            }
        };
        if let Some(&bad) = union.iter().find(|&&t| t as usize >= model.vocab_size()) {
            return Err(pia_core::ModelError::TokenOutOfRange {
                id: bad,
                vocab: model.vocab_size(),
            }
            .into());
        }
        let pos = positions.row(j);
        let h = model.hidden();
        let mut inputs = Vec::with_capacity(union.len() * h);
        for &t in &union {
            inputs.extend(table.row(t as usize).iter().zip(pos).map(|(&e, &p)| e + p));
        }
        let inputs = Tensor::new(vec![union.len(), h], inputs)?;
        let batch = model.extend_candidates(&cache, &inputs, target.adapters)?;
        let target_row = a.row(j);
        let dists: Vec<T> = (0..union.len())
            .map(|c| dist_sq(batch.outputs.row(c), target_row))
            .collect();
        let mut best = 0;
        for c in 1..union.len() {
            if dists[c].partial_cmp(&dists[best]) == Some(Ordering::Less) {
                best = c;
            }
        }
        cache.push(&batch, best);
        chosen.push(union[best]);
        if !(j == 0 && bos.is_some()) {
            let t = truth.map(|t| t.ids()[j]);
            diags.positions.push(PositionDiagnostics {
                position: j,
                truth_in_embedding: t.map(|t| se.contains(&t)),
                truth_in_semantic: t.map(|t| ss.contains(&t)),
                truth_in_union: t.map(|t| union.contains(&t)),
                embedding_candidates: se,
                semantic_candidates: ss,
                distances: dists.iter().map(|d| d.as_f64().sqrt()).collect(),
                candidates: union,
                chosen: chosen[j],
                truth: t,
            });
        }
    }
    Ok((TokenSequence::new(chosen), diags))
}
