//! One entry point over all white-box variants.

use pia_core::model::TokenSequence;
use pia_core::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::AttackConfig;
use crate::discretize::{adaptive_discretize, exhaustive_discretize, naive_discretize, Diagnostics, DiscretizeOptions};
use crate::error::AttackError;
use crate::optimize::{constrained_optimize, naive_optimize};
use crate::oracle::NextTokenScorer;
use crate::relax::{softmax_relax_optimize, RelaxConfig, RelaxInit};
use crate::target::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Constrained,
    Naive,
    Softmax,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretizer {
    Adaptive,
    Naive,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Self::Constrained => "constrained",
            Self::Naive => "naive",
            Self::Softmax => "softmax",
            Self::Exhaustive => "exhaustive",
        }
    }
}

impl Discretizer {
    pub fn name(self) -> &'static str {
        match self {
            Self::Adaptive => "adaptive",
            Self::Naive => "naive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome<T: Real = f64> {
    pub tokens: TokenSequence,
    /// Continuous estimate in token space, when the variant produces one.
    pub embedding: Option<Tensor<T>>,
    pub trace: Vec<f64>,
    pub diagnostics: Option<Diagnostics>,
}

/// Runs one optimizer/discretizer pair. The softmax baseline decodes by
/// argmax unless adaptive discretization is requested; the exhaustive
/// variant ignores the discretizer.
pub fn invert<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    optimizer: Optimizer,
    discretizer: Discretizer,
    cfg: &AttackConfig,
    oracle: Option<&dyn NextTokenScorer>,
    truth: Option<&TokenSequence>,
) -> Result<AttackOutcome<T>, AttackError> {
    let mut out = invert_many(target, a, optimizer, &[discretizer], cfg, oracle, truth)?;
    Ok(out.pop().expect("one discretizer requested"))
}

/// Like [`invert`], but optimizes once and discretizes the result with each
/// of `discretizers`, in order.
pub fn invert_many<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    optimizer: Optimizer,
    discretizers: &[Discretizer],
    cfg: &AttackConfig,
    oracle: Option<&dyn NextTokenScorer>,
    truth: Option<&TokenSequence>,
) -> Result<Vec<AttackOutcome<T>>, AttackError> {
    cfg.validate()?;
    let (embedding, trace, argmax) = match optimizer {
        Optimizer::Exhaustive => {
            let tokens = exhaustive_discretize(target, a, cfg.bos)?;
            return Ok(discretizers
                .iter()
                .map(|_| AttackOutcome {
                    tokens: tokens.clone(),
                    embedding: None,
                    trace: Vec::new(),
                    diagnostics: None,
                })
                .collect());
        }
        Optimizer::Constrained => {
            let r = constrained_optimize(target, a, cfg)?;
            (r.embedding, r.trace, None)
        }
        Optimizer::Naive => {
            let r = naive_optimize(target, a, cfg)?;
            (r.embedding, r.trace, None)
        }
        Optimizer::Softmax => {
            let r = softmax_relax_optimize(
                target,
                a,
                &RelaxConfig {
                    temperature: cfg.temperature,
                    lr: cfg.lr,
                    iterations: cfg.iterations,
                    seed: cfg.seed,
                    bos: cfg.bos,
                    init: RelaxInit::Random,
                },
            )?;
            (r.embedding, r.trace, Some(r.tokens))
        }
    };
    let mut out = Vec::with_capacity(discretizers.len());
    for &d in discretizers {
        let (tokens, diagnostics) = match (d, &argmax) {
            (Discretizer::Adaptive, _) => {
                let opts = DiscretizeOptions {
                    top_k: cfg.top_k,
                    top_y: cfg.top_y,
                    oracle,
                    bos: cfg.bos,
                    truth,
                };
                let (t, d) = adaptive_discretize(target, &embedding, a, &opts)?;
                (t, Some(d))
            }
            (Discretizer::Naive, Some(t)) => (t.clone(), None),
            (Discretizer::Naive, None) => {
                let mut t = naive_discretize(target.model, &embedding);
                if let Some(b) = cfg.bos {
                    let mut ids = t.ids().to_vec();
                    ids[0] = b;
                    t = TokenSequence::new(ids);
                }
                (t, None)
            }
        };
        out.push(AttackOutcome {
            tokens,
            embedding: Some(embedding.clone()),
            trace: trace.clone(),
            diagnostics,
        });
    }
    Ok(out)
}
