//! Joint recovery of the prompt and unknown LoRA adapters.

use std::path::Path;

use pia_core::model::io::TensorContainer;
use pia_core::model::{AdapterSet, LoraAdapter, Model, Projection, TokenSequence};
use pia_core::{Graph, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::AttackConfig;
use crate::discretize::{adaptive_discretize, DiscretizeOptions};
use crate::error::AttackError;
use crate::optimize::constrained_optimize;
use crate::oracle::NextTokenScorer;
use crate::target::Target;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreyboxConfig {
    pub rank: usize,
    pub wrapped: Vec<Projection>,
    pub rounds: usize,
    pub adapter_lr: f64,
    pub adapter_steps: usize,
    /// Standard deviation of the initial `θ_A`; `θ_B` starts at zero.
    pub init_std: f64,
    pub whitebox: AttackConfig,
}

impl Default for GreyboxConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            wrapped: vec![Projection::Query, Projection::Value],
            rounds: 5,
            adapter_lr: 1e-3,
            adapter_steps: 5,
            init_std: 0.01,
            whitebox: AttackConfig::default(),
        }
    }
}

impl GreyboxConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        self.whitebox.validate()?;
        if self.rank == 0 || self.rounds == 0 {
            return Err(AttackError::Config("rank and rounds must be >= 1".into()));
        }
        if !(self.adapter_lr > 0.0) || !(self.init_std >= 0.0) {
            return Err(AttackError::Config(format!(
                "adapter_lr must be > 0 and init_std >= 0, got {} and {}",
                self.adapter_lr, self.init_std
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreyboxState<T: Real = f64> {
    pub tokens: TokenSequence,
    /// Estimated adapters on layers `1..=boundary`, with `α = r` so the
    /// scaling is folded into `θ_B`.
    pub adapters: AdapterSet<T>,
    pub rounds_completed: usize,
    /// `‖G_θ(E(x̂)) − A‖²` after each round's adapter update.
    pub loss_history: Vec<f64>,
    /// Recovery kept after each round.
    pub round_tokens: Vec<TokenSequence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterStep<T: Real = f64> {
    pub adapters: AdapterSet<T>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub trace: Vec<f64>,
}

/// `(∂A, ∂B)` per adapter, in the set's iteration order.
pub type AdapterGrads<T> = Vec<(Tensor<T>, Tensor<T>)>;

/// Attacker-side adapter estimates before the first round.
pub fn initial_adapters<T: Real>(
    model: &Model<T>,
    boundary: usize,
    cfg: &GreyboxConfig,
) -> Result<AdapterSet<T>, AttackError> {
    Ok(AdapterSet::random(
        model.config(),
        boundary,
        &cfg.wrapped,
        cfg.rank,
        cfg.rank as f64,
        cfg.init_std,
        0.0,
        cfg.whitebox.seed ^ 0x5eed_ada9,
    )?)
}

fn adapter_eval<T: Real>(
    model: &Model<T>,
    boundary: usize,
    input: &Tensor<T>,
    adapters: &AdapterSet<T>,
    a: &Tensor<T>,
) -> Result<(f64, AdapterGrads<T>), AttackError> {
    let mut g = Graph::new();
    let vars = adapters.register(&mut g, true);
    let x = g.constant(input.clone());
    let y = model.forward_to_graph(&mut g, x, boundary, Some(&vars))?;
    let av = g.constant(a.clone());
    let d = g.sub(y, av)?;
    let loss = g.l2_norm_sq(d)?;
    let grads = g.backward(loss)?;
    let per = vars.vars.values().map(|v| (grads.get(v.a), grads.get(v.b))).collect();
    Ok((g.value(loss).item()?.as_f64(), per))
}

/// `‖G_θ(E(x)) − A‖²` and its gradient with respect to every adapter factor,
/// as `(∂A, ∂B)` pairs in the set's iteration order.
pub fn adapter_loss<T: Real>(
    model: &Model<T>,
    boundary: usize,
    x: &TokenSequence,
    adapters: &AdapterSet<T>,
    a: &Tensor<T>,
) -> Result<(f64, AdapterGrads<T>), AttackError> {
    adapter_eval(model, boundary, &model.embed(x)?, adapters, a)
}

const MAX_NAN_HALVINGS: usize = 5;

/// Gradient descent on every adapter factor with `x̂` fixed, minimizing
/// `‖G_θ(E(x̂)) − A‖²`. Steps that raise the loss are rejected and the step
/// size halved; more than five consecutive non-finite results abort.
pub fn adapter_step<T: Real>(
    model: &Model<T>,
    boundary: usize,
    x: &TokenSequence,
    adapters: &AdapterSet<T>,
    a: &Tensor<T>,
    lr: f64,
    steps: usize,
) -> Result<AdapterStep<T>, AttackError> {
    let input = model.embed(x)?;
    let (mut loss, mut grads) = adapter_eval(model, boundary, &input, adapters, a)?;
    let loss_before = loss;
    let mut cur = adapters.clone();
    let mut step = lr;
    let mut nan_halvings = 0;
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut cand = cur.clone();
        for ((_, ad), (ga, gb)) in cand.iter_mut().zip(&grads) {
            ad.a = ad.a.sub(&ga.scale(T::lit(step))?)?;
            ad.b = ad.b.sub(&gb.scale(T::lit(step))?)?;
        }
        match adapter_eval(model, boundary, &input, &cand, a) {
            Ok((l, g)) if l.is_finite() && l <= loss => {
                cur = cand;
                loss = l;
                grads = g;
                nan_halvings = 0;
            }
            Ok((l, _)) if l.is_finite() => step *= 0.5,
            _ => {
                nan_halvings += 1;
                if nan_halvings > MAX_NAN_HALVINGS {
                    return Err(AttackError::Diverged {
                        iteration: trace.len(),
                        trace,
                    });
                }
                step *= 0.5;
            }
        }
        trace.push(loss);
    }
    Ok(AdapterStep {
        adapters: cur,
        loss_before,
        loss_after: loss,
        trace,
    })
}

/// Alternates white-box inversion under the current adapter estimates with
/// adapter updates under the current recovery.
///
/// A round's new recovery replaces the previous one only if it does not
/// raise the activation loss under the current estimates, so the loss
/// history never increases.
pub fn alternating_invert<T: Real>(
    model: &Model<T>,
    a: &Tensor<T>,
    boundary: usize,
    oracle: Option<&dyn NextTokenScorer>,
    cfg: &GreyboxConfig,
    truth: Option<&TokenSequence>,
) -> Result<GreyboxState<T>, AttackError> {
    cfg.validate()?;
    let mut adapters = initial_adapters(model, boundary, cfg)?;
    let mut tokens: Option<TokenSequence> = None;
    let mut loss_history = Vec::with_capacity(cfg.rounds);
    let mut round_tokens = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let target = Target::new(model, boundary)?.with_adapters(&adapters);
        let opt = constrained_optimize(&target, a, &cfg.whitebox)?;
        let opts = DiscretizeOptions {
            top_k: cfg.whitebox.top_k,
            top_y: cfg.whitebox.top_y,
            oracle,
            bos: cfg.whitebox.bos,
            truth,
        };
        let (fresh, _) = adaptive_discretize(&target, &opt.embedding, a, &opts)?;
        let kept = match tokens.take() {
            Some(prev) if target.activation_loss(&prev, a)? < target.activation_loss(&fresh, a)? => prev,
            _ => fresh,
        };
        let step = adapter_step(model, boundary, &kept, &adapters, a, cfg.adapter_lr, cfg.adapter_steps)?;
        adapters = step.adapters;
        loss_history.push(step.loss_after);
        round_tokens.push(kept.clone());
        tokens = Some(kept);
    }
    Ok(GreyboxState {
        tokens: tokens.expect("rounds >= 1"),
        adapters,
        rounds_completed: cfg.rounds,
        loss_history,
        round_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateSidecar {
    tokens: TokenSequence,
    rounds_completed: usize,
    loss_history: Vec<f64>,
    round_tokens: Vec<TokenSequence>,
    adapters: Vec<AdapterEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdapterEntry {
    layer: usize,
    projection: Projection,
    alpha: f64,
}

fn adapter_name(layer: usize, p: Projection, factor: &str) -> String {
    format!("layers.{layer}.{}.{factor}", p.name())
}

impl<T: Real> GreyboxState<T> {
    /// Writes `<stem>.json` and the adapter estimates to `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<(), AttackError> {
        let mut tensors = Vec::new();
        let mut entries = Vec::new();
        for (&(layer, p), ad) in self.adapters.iter() {
            tensors.push((adapter_name(layer, p, "a"), ad.a.cast()));
            tensors.push((adapter_name(layer, p, "b"), ad.b.cast()));
            entries.push(AdapterEntry {
                layer,
                projection: p,
                alpha: ad.alpha.as_f64(),
            });
        }
        TensorContainer { config: None, tensors }.save(&stem.with_extension("bin"))?;
        let side = StateSidecar {
            tokens: self.tokens.clone(),
            rounds_completed: self.rounds_completed,
            loss_history: self.loss_history.clone(),
            round_tokens: self.round_tokens.clone(),
            adapters: entries,
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self, AttackError> {
        let side: StateSidecar = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let c = TensorContainer::load(&stem.with_extension("bin"))?;
        let mut adapters = AdapterSet::new();
        for e in side.adapters {
            let get = |f: &str| {
                c.get(&adapter_name(e.layer, e.projection, f))
                    .map(|t| t.cast::<T>())
                    .ok_or_else(|| AttackError::Config(format!("missing adapter factor {f} for layer {}", e.layer)))
            };
            adapters.insert(
                e.layer,
                e.projection,
                LoraAdapter::new(get("a")?, get("b")?, T::lit(e.alpha))?,
            );
        }
        Ok(Self {
            tokens: side.tokens,
            adapters,
            rounds_completed: side.rounds_completed,
            loss_history: side.loss_history,
            round_tokens: side.round_tokens,
        })
    }
}
