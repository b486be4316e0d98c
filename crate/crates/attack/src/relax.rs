//! Softmax-relaxation baseline and the gradient-vanishing probe.

use pia_core::model::{Model, ModelWeights, TokenSequence};
use pia_core::{Graph, Real, Tensor, TokenId, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::AttackError;
use crate::target::Target;

#[derive(Debug, Clone, PartialEq)]
pub enum RelaxInit {
    /// `z ~ N(0, 1)` elementwise.
    Random,
    /// One-hot logits of the given height at these tokens.
    Tokens { tokens: TokenSequence, logit: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxConfig {
    pub temperature: f64,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub bos: Option<TokenId>,
    pub init: RelaxInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxResult<T: Real = f64> {
    /// Logits of the free positions (all positions when no BOS is pinned).
    pub z: Tensor<T>,
    /// Token-space rows `Eᵀ·softmax(z_i / T)`.
    pub embedding: Tensor<T>,
    pub tokens: TokenSequence,
    pub trace: Vec<f64>,
}

/// Records `softmax(z/T)·E` (with the BOS row prepended) and returns it.
fn relaxed_embedding<T: Real>(
    g: &mut Graph<T>,
    z: Var,
    table: &Tensor<T>,
    temperature: f64,
    bos: Option<TokenId>,
) -> Result<Var, AttackError> {
    let scaled = g.scale(z, T::lit(1.0 / temperature))?;
    let s = g.softmax(scaled, 1)?;
    let e = g.constant(table.clone());
    let v = g.matmul(s, e)?;
    Ok(match bos {
        Some(b) => {
            let row = g.constant(table.slice_rows(b as usize, b as usize + 1)?);
            g.concat_rows(&[row, v])?
        }
        None => v,
    })
}

fn relax_eval<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    z: &Tensor<T>,
    cfg: &RelaxConfig,
) -> Result<(f64, Tensor<T>, Tensor<T>), AttackError> {
    let mut g = Graph::new();
    let zv = g.leaf(z.clone());
    let v = relaxed_embedding(&mut g, zv, target.model.token_table(), cfg.temperature, cfg.bos)?;
    let y = target.record(&mut g, v)?;
    let av = g.constant(a.clone());
    let d = g.sub(y, av)?;
    let loss = g.l2_norm_sq(d)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item()?.as_f64(), grads.get(zv), g.value(v).clone()))
}

/// Gradient descent on relaxed token scores `z`, decoded by row-wise argmax.
pub fn softmax_relax_optimize<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    cfg: &RelaxConfig,
) -> Result<RelaxResult<T>, AttackError> {
    if !(cfg.temperature > 0.0) || !(cfg.lr > 0.0) || cfg.iterations == 0 {
        return Err(AttackError::Config(format!(
            "relaxation needs temperature > 0, lr > 0 and iterations >= 1, got {cfg:?}"
        )));
    }
    let len = target.prompt_len(a)?;
    let vocab = target.model.vocab_size();
    let free = len - usize::from(cfg.bos.is_some());
    let mut z = match &cfg.init {
        RelaxInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            Tensor::new(
                vec![free, vocab],
                (0..free * vocab).map(|_| T::lit(n.sample(&mut rng))).collect(),
            )?
        }
        RelaxInit::Tokens { tokens, logit } => {
            let ids = &tokens.ids()[len - free..];
            let mut z = Tensor::zeros(&[free, vocab]);
            for (i, &t) in ids.iter().enumerate() {
                z.row_mut(i)[t as usize] = T::lit(*logit);
            }
            z
        }
    };
    if free == 0 {
        let tokens = TokenSequence::new(cfg.bos.into_iter().collect());
        let (loss, _, emb) = relax_eval(target, a, &z, cfg)?;
        return Ok(RelaxResult {
            z,
            embedding: emb,
            tokens,
            trace: vec![loss],
        });
    }
    let (mut loss, mut grad, mut emb) = relax_eval(target, a, &z, cfg)?;
    if !loss.is_finite() {
        return Err(AttackError::Diverged {
            iteration: 0,
            trace: Vec::new(),
        });
    }
    let mut step = cfg.lr;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let cand = z.sub(&grad.scale(T::lit(step))?)?;
        match relax_eval(target, a, &cand, cfg) {
            Ok((l, gr, e)) if l.is_finite() && l <= loss => {
                z = cand;
                loss = l;
                grad = gr;
                emb = e;
                step = (step * 2.0).min(cfg.lr);
            }
            _ => step *= 0.5,
        }
        trace.push(loss);
    }
    let mut ids: Vec<TokenId> = cfg.bos.into_iter().collect();
    ids.extend((0..free).map(|i| argmax(z.row(i)) as TokenId));
    Ok(RelaxResult {
        z,
        embedding: emb,
        tokens: TokenSequence::new(ids),
        trace,
    })
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub trials: usize,
    /// Standard deviation of the resampled embedding table.
    pub sigma: f64,
    pub prompt_len: usize,
    pub boundary: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Lower edge, as a power of ten.
    pub log10_lo: i32,
    pub dz: usize,
    pub dv: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingReport {
    pub trials: usize,
    /// Trials in which some row had `‖∂L/∂z_i‖₁ > 4σ‖∂L/∂v_i‖₂`.
    pub violations: usize,
    pub violation_rate: f64,
    pub median_abs_dz: f64,
    pub median_abs_dv: f64,
    /// `median|∂L/∂z| / median|∂L/∂v|`; `None` if the latter is zero.
    pub median_ratio: Option<f64>,
    /// Largest observed `‖∂L/∂z_i‖₁ / (σ‖∂L/∂v_i‖₂)` over all rows.
    pub max_bound_ratio: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

/// Per trial: draw an embedding table from `N(0, σ²)`, a prompt, and random
/// logits `z`; take `L = ‖F(softmax(z)·E + P) − F(E(x) + P)‖²` and compare
/// `‖∂L/∂z_i‖₁` with `4σ‖∂L/∂v_i‖₂` for every row `i` (temperature 1).
pub fn gradient_vanishing_probe<T: Real>(model: &Model<T>, cfg: &ProbeConfig) -> Result<VanishingReport, AttackError> {
    if cfg.trials == 0 || cfg.prompt_len == 0 || !(cfg.sigma >= 0.0) {
        return Err(AttackError::Config(format!("invalid probe config {cfg:?}")));
    }
    let config = model.config().clone();
    let (vocab, h) = (config.vocab_size, config.hidden);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut violations = 0;
    let mut all_dz = Vec::new();
    let mut all_dv = Vec::new();
    let mut max_ratio: Option<f64> = None;
    for trial in 0..cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial as u64);
        let mut weights: ModelWeights<T> = model.weights().clone();
        weights.token_embedding = Tensor::new(
            vec![vocab, h],
            (0..vocab * h)
                .map(|_| T::lit(cfg.sigma * normal.sample(&mut rng)))
                .collect(),
        )?;
        let m = Model::new_unchecked(config.clone(), weights);
        let target = Target::new(&m, cfg.boundary)?;
        let x = TokenSequence::new(
            (0..cfg.prompt_len)
                .map(|_| rng.random_range(0..vocab as TokenId))
                .collect(),
        );
        let a = target.forward_tokens(&x)?;
        let z = Tensor::new(
            vec![cfg.prompt_len, vocab],
            (0..cfg.prompt_len * vocab)
                .map(|_| T::lit(normal.sample(&mut rng)))
                .collect(),
        )?;
        let mut g = Graph::new();
        let zv = g.leaf(z);
        let v = relaxed_embedding(&mut g, zv, m.token_table(), 1.0, None)?;
        let y = target.record(&mut g, v)?;
        let av = g.constant(a);
        let d = g.sub(y, av)?;
        let loss = g.l2_norm_sq(d)?;
        let grads = g.backward(loss)?;
        let dz = grads.get(zv);
        let dv = grads.get(v);
        let mut violated = false;
        for i in 0..cfg.prompt_len {
            let l1: f64 = dz.row(i).iter().map(|x| x.as_f64().abs()).sum();
            let l2: f64 = dv.row(i).iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
            if l1 > 4.0 * cfg.sigma * l2 {
                violated = true;
            }
            if cfg.sigma > 0.0 && l2 > 0.0 {
                let r = l1 / (cfg.sigma * l2);
                max_ratio = Some(max_ratio.map_or(r, |m| m.max(r)));
            }
        }
        violations += usize::from(violated);
        all_dz.extend(dz.data().iter().map(|x| x.as_f64().abs()));
        all_dv.extend(dv.data().iter().map(|x| x.as_f64().abs()));
    }
    let median_abs_dz = median(&mut all_dz);
    let median_abs_dv = median(&mut all_dv);
    Ok(VanishingReport {
        trials: cfg.trials,
        violations,
        violation_rate: violations as f64 / cfg.trials as f64,
        median_abs_dz,
        median_abs_dv,
        median_ratio: (median_abs_dv > 0.0).then(|| median_abs_dz / median_abs_dv),
        max_bound_ratio: max_ratio,
        histogram: histogram(&all_dz, &all_dv),
    })
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Decade bins from 1e-12 up to 1e2; exact zeros and smaller values land in
/// the first bin.
fn histogram(dz: &[f64], dv: &[f64]) -> Vec<HistogramBin> {
    const LO: i32 = -12;
    const HI: i32 = 2;
    let bin = |x: f64| -> usize {
        if x <= 0.0 {
            return 0;
        }
        ((x.log10().floor() as i32).clamp(LO, HI - 1) - LO) as usize
    };
    let mut bins: Vec<HistogramBin> = (LO..HI)
        .map(|e| HistogramBin {
            log10_lo: e,
            dz: 0,
            dv: 0,
        })
        .collect();
    for &x in dz {
        bins[bin(x)].dz += 1;
    }
    for &x in dv {
        bins[bin(x)].dv += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;
    use pia_core::model::ModelConfig;

    fn model() -> Model {
        Model::random(ModelConfig::tiny().with_layers(2), 17, 0.02).unwrap()
    }

    #[test]
    fn one_hot_start_has_near_zero_loss() {
        let m = model();
        let t = Target::new(&m, 2).unwrap();
        let x = TokenSequence::new(vec![3, 14, 15, 9]);
        let a = t.forward_tokens(&x).unwrap();
        let cfg = RelaxConfig {
            temperature: 1.0,
            lr: 0.1,
            iterations: 1,
            seed: 0,
            bos: None,
            init: RelaxInit::Tokens {
                tokens: x.clone(),
                logit: 60.0,
            },
        };
        let r = softmax_relax_optimize(&t, &a, &cfg).unwrap();
        assert!(r.trace[0] < 1e-12, "{}", r.trace[0]);
        assert_eq!(r.tokens, x);
    }

    #[test]
    fn zero_embedding_gives_zero_score_gradient() {
        let cfg = ProbeConfig {
            trials: 3,
            sigma: 0.0,
            prompt_len: 3,
            boundary: 2,
            seed: 1,
        };
        let r = gradient_vanishing_probe(&model(), &cfg).unwrap();
        assert_eq!(r.median_abs_dz, 0.0);
        assert_eq!(r.violations, 0);
        let total_dz: usize = r.histogram.iter().map(|b| b.dz).sum();
        assert_eq!(r.histogram[0].dz, total_dz);
    }

    #[test]
    fn bound_holds_on_small_sample() {
        let cfg = ProbeConfig {
            trials: 20,
            sigma: 0.02,
            prompt_len: 4,
            boundary: 2,
            seed: 2,
        };
        let r = gradient_vanishing_probe(&model(), &cfg).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
        assert!(r.median_ratio.unwrap() < 1e-2, "{r:?}");
    }

    #[test]
    fn bos_is_kept() {
        let m = model();
        let t = Target::new(&m, 1).unwrap();
        let x = TokenSequence::new(vec![0, 5, 6]);
        let a = t.forward_tokens(&x).unwrap();
        let cfg = RelaxConfig {
            temperature: 1.0,
            lr: 0.1,
            iterations: 5,
            seed: 3,
            bos: Some(0),
            init: RelaxInit::Random,
        };
        let r = softmax_relax_optimize(&t, &a, &cfg).unwrap();
        assert_eq!(r.tokens.ids()[0], 0);
        assert_eq!(r.z.rows(), 2);
        assert_eq!(r.embedding.row(0), m.token_table().row(0));
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
