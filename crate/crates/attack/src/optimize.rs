//! Gradient descent on a continuous token-space embedding.

use pia_core::{Graph, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::AttackConfig;
use crate::error::AttackError;
use crate::target::Target;

/// Result of optimizing `v̂`. The embedding is stored in token space; the
/// model input is `embedding + P`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedEmbedding<T: Real = f64> {
    pub embedding: Tensor<T>,
    /// Objective at the returned point.
    pub loss: f64,
    /// `‖F(v̂) − A‖²` at the returned point.
    pub activation_loss: f64,
    /// Objective after each iteration; non-increasing by construction.
    pub trace: Vec<f64>,
    /// Steps that were rejected and retried with a halved step size.
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub lambda: f64,
    pub clamp: bool,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub bos: Option<u32>,
}

impl OptimizeOptions {
    pub fn constrained(cfg: &AttackConfig) -> Self {
        Self {
            lambda: cfg.lambda,
            clamp: true,
            lr: cfg.lr,
            iterations: cfg.iterations,
            seed: cfg.seed,
            bos: cfg.bos,
        }
    }

    pub fn naive(cfg: &AttackConfig) -> Self {
        Self {
            lambda: 0.0,
            clamp: false,
            ..Self::constrained(cfg)
        }
    }
}

/// Minimizes `‖F(v̂) − A‖² + λ·Σ_i min_t ‖v̂_i − E(t)‖²`, clamping each
/// coordinate to the embedding table's range after every step.
pub fn constrained_optimize<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<OptimizedEmbedding<T>, AttackError> {
    cfg.validate()?;
    optimize_embedding(target, a, &OptimizeOptions::constrained(cfg), None)
}

/// Minimizes `‖F(v̂) − A‖²` alone, without clamping.
pub fn naive_optimize<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<OptimizedEmbedding<T>, AttackError> {
    cfg.validate()?;
    optimize_embedding(target, a, &OptimizeOptions::naive(cfg), None)
}

/// Uniform draw inside the per-dimension embedding bounds, with row 0 pinned
/// to the BOS embedding when one is known.
pub fn initial_embedding<T: Real>(
    target: &Target<'_, T>,
    len: usize,
    seed: u64,
    bos: Option<u32>,
) -> Result<Tensor<T>, AttackError> {
    let model = target.model;
    let (lo, hi) = model.embedding_bounds();
    let h = model.hidden();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(len * h);
    for _ in 0..len {
        for j in 0..h {
            let (l, r) = (lo.data()[j].as_f64(), hi.data()[j].as_f64());
            let u: f64 = rng.random();
            data.push(T::lit(l + (r - l) * u));
        }
    }
    let mut u = Tensor::new(vec![len, h], data)?;
    pin_bos(target, &mut u, bos)?;
    Ok(u)
}

fn pin_bos<T: Real>(target: &Target<'_, T>, u: &mut Tensor<T>, bos: Option<u32>) -> Result<(), AttackError> {
    if let Some(b) = bos {
        if b as usize >= target.model.vocab_size() {
            return Err(AttackError::Config(format!("bos id {b} outside vocabulary")));
        }
        let row = target.model.token_table().row(b as usize).to_vec();
        u.row_mut(0).copy_from_slice(&row);
    }
    Ok(())
}

/// Objective value and its gradient with respect to the token-space rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective<T: Real = f64> {
    pub loss: f64,
    pub activation_loss: f64,
    pub grad: Tensor<T>,
}

/// `‖F(u + P) − A‖² + λ·Σ_i min_t ‖u_i − E(t)‖²` and its gradient in `u`.
/// The gradient of row 0 is zeroed when `bos` pins it.
pub fn objective<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    u: &Tensor<T>,
    lambda: f64,
    bos: Option<u32>,
) -> Result<Objective<T>, AttackError> {
    let mut g = Graph::new();
    let uv = g.leaf(u.clone());
    let y = target.record(&mut g, uv)?;
    let av = g.constant(a.clone());
    let diff = g.sub(y, av)?;
    let act = g.l2_norm_sq(diff)?;
    let loss = if lambda > 0.0 {
        let c = g.nearest_row_dist_sq(uv, target.model.token_table())?;
        let c = g.scale(c, T::lit(lambda))?;
        g.add(act, c)?
    } else {
        act
    };
    let grads = g.backward(loss)?;
    let mut grad = grads.get(uv);
    if bos.is_some() {
        grad.row_mut(0).iter_mut().for_each(|v| *v = T::zero());
    }
    Ok(Objective {
        loss: g.value(loss).item()?.as_f64(),
        activation_loss: g.value(act).item()?.as_f64(),
        grad,
    })
}

/// Gradient descent from `init` (or a seeded uniform draw).
///
/// A step that raises the objective or produces a non-finite value is
/// rejected and retried at half the step size; after an accepted step the
/// step size doubles again, capped at `lr`.
pub fn optimize_embedding<T: Real>(
    target: &Target<'_, T>,
    a: &Tensor<T>,
    opts: &OptimizeOptions,
    init: Option<Tensor<T>>,
) -> Result<OptimizedEmbedding<T>, AttackError> {
    if !(opts.lr > 0.0) || opts.iterations == 0 || !(opts.lambda >= 0.0) {
        return Err(AttackError::Config(format!("invalid optimizer options {opts:?}")));
    }
    let len = target.prompt_len(a)?;
    let mut u = match init {
        Some(mut u) => {
            if u.shape() != a.shape() {
                return Err(AttackError::Activation {
                    got: u.rows(),
                    width: u.cols(),
                    expected: a.cols(),
                });
            }
            pin_bos(target, &mut u, opts.bos)?;
            u
        }
        None => initial_embedding(target, len, opts.seed, opts.bos)?,
    };
    let bounds = opts.clamp.then(|| target.model.embedding_bounds());
    if let Some((lo, hi)) = &bounds {
        clamp_rows(&mut u, lo, hi);
    }
    let mut cur = objective(target, a, &u, opts.lambda, opts.bos)
        .ok()
        .filter(|e| e.loss.is_finite())
        .ok_or(AttackError::Diverged {
            iteration: 0,
            trace: Vec::new(),
        })?;
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut step = opts.lr;
    let mut rejected = 0;
    for _ in 0..opts.iterations {
        let mut cand = u.sub(&cur.grad.scale(T::lit(step))?)?;
        if let Some((lo, hi)) = &bounds {
            clamp_rows(&mut cand, lo, hi);
        }
        match objective(target, a, &cand, opts.lambda, opts.bos) {
            Ok(e) if e.loss.is_finite() && e.loss <= cur.loss => {
                u = cand;
                cur = e;
                step = (step * 2.0).min(opts.lr);
            }
            _ => {
                step *= 0.5;
                rejected += 1;
            }
        }
        trace.push(cur.loss);
    }
    Ok(OptimizedEmbedding {
        embedding: u,
        loss: cur.loss,
        activation_loss: cur.activation_loss,
        trace,
        rejected_steps: rejected,
    })
}

fn clamp_rows<T: Real>(u: &mut Tensor<T>, lo: &Tensor<T>, hi: &Tensor<T>) {
    let h = lo.len();
    for (k, v) in u.data_mut().iter_mut().enumerate() {
        let j = k % h;
        *v = v.max(lo.data()[j]).min(hi.data()[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pia_core::model::{Model, ModelConfig, TokenSequence};

    fn model() -> Model {
        Model::random(ModelConfig::tiny().with_layers(2), 7, 0.05).unwrap()
    }

    fn cfg(iterations: usize) -> AttackConfig {
        AttackConfig {
            iterations,
            bos: None,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn identity_boundary_converges_to_activation() {
        let m = model();
        let t = Target::new(&m, 0).unwrap();
        let a = m.embed(&TokenSequence::new(vec![3, 9, 1])).unwrap();
        let opts = OptimizeOptions {
            lambda: 0.0,
            ..OptimizeOptions::constrained(&cfg(200))
        };
        let r = optimize_embedding(&t, &a, &opts, None).unwrap();
        let v = r.embedding.add(&m.positions(3).unwrap()).unwrap();
        assert!(v.sub(&a).unwrap().l2_norm_sq().sqrt() < 1e-6);
    }

    #[test]
    fn trace_never_increases_and_stays_in_bounds() {
        let m = model();
        let t = Target::new(&m, 2).unwrap();
        let a = m.hidden_states(&TokenSequence::new(vec![5, 6, 7, 8]), 2, None).unwrap();
        let r = constrained_optimize(&t, &a, &cfg(60)).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        let (lo, hi) = m.embedding_bounds();
        for i in 0..r.embedding.rows() {
            for (j, &v) in r.embedding.row(i).iter().enumerate() {
                assert!(lo.data()[j] <= v && v <= hi.data()[j]);
            }
        }
    }

    #[test]
    fn naive_is_unclamped_zero_lambda() {
        let m = model();
        let t = Target::new(&m, 1).unwrap();
        let a = m.hidden_states(&TokenSequence::new(vec![1, 2]), 1, None).unwrap();
        let c = cfg(30);
        let naive = naive_optimize(&t, &a, &c).unwrap();
        let opts = OptimizeOptions {
            lambda: 0.0,
            clamp: false,
            ..OptimizeOptions::constrained(&c)
        };
        assert_eq!(naive, optimize_embedding(&t, &a, &opts, None).unwrap());
        assert!(naive.trace.last().unwrap() <= &naive.trace[0]);
    }

    #[test]
    fn bos_row_stays_pinned() {
        let m = model();
        let t = Target::new(&m, 2).unwrap();
        let a = m.hidden_states(&TokenSequence::new(vec![0, 4, 4]), 2, None).unwrap();
        let c = AttackConfig {
            bos: Some(0),
            ..cfg(20)
        };
        let r = constrained_optimize(&t, &a, &c).unwrap();
        assert_eq!(r.embedding.row(0), m.token_table().row(0));
    }

    #[test]
    fn rejects_wrong_width() {
        let m = model();
        let t = Target::new(&m, 1).unwrap();
        let a = Tensor::<f64>::zeros(&[2, 5]);
        assert!(matches!(
            constrained_optimize(&t, &a, &cfg(5)),
            Err(AttackError::Activation { .. })
        ));
    }
}
