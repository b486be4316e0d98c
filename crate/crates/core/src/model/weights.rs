use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::ModelError;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Parameters of one pre-norm transformer block.
///
/// Projections use the `x · W` convention, so `W` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T: Real = f64> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w_up: Tensor<T>,
    pub w_down: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T: Real = f64> {
    /// `|V| × h` token table.
    pub token_embedding: Tensor<T>,
    /// `max_seq_len × h` learned absolute positions.
    pub position_embedding: Tensor<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Tensor<T>,
}

/// Standard deviations of the Gaussian initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitScales {
    pub embedding: f64,
    pub position: f64,
    pub layer: f64,
}

impl InitScales {
    pub fn uniform(sigma: f64) -> Self {
        Self {
            embedding: sigma,
            position: sigma,
            layer: sigma,
        }
    }
}

impl<T: Real> ModelWeights<T> {
    /// Seeded Gaussian initialisation with one standard deviation everywhere.
    pub fn random_init(cfg: &ModelConfig, seed: u64, sigma_w: f64) -> Result<Self, ModelError> {
        Self::random_init_scaled(cfg, seed, InitScales::uniform(sigma_w))
    }

    pub fn random_init_scaled(cfg: &ModelConfig, seed: u64, scales: InitScales) -> Result<Self, ModelError> {
        cfg.validate()?;
        for s in [scales.embedding, scales.position, scales.layer] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(ModelError::Config(format!("invalid init std {s}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let m = cfg.mlp_hidden();

        let mut token_embedding = gaussian(&mut rng, &[cfg.vocab_size, h], scales.embedding)?;
        if scales.embedding > 0.0 {
            resample_duplicate_rows(&mut rng, &mut token_embedding, scales.embedding)?;
        }
        let position_embedding = gaussian(&mut rng, &[cfg.max_seq_len, h], scales.position)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(LayerWeights {
                attn_norm: Tensor::full(&[h], T::one()),
                wq: gaussian(&mut rng, &[h, h], scales.layer)?,
                wk: gaussian(&mut rng, &[h, h], scales.layer)?,
                wv: gaussian(&mut rng, &[h, h], scales.layer)?,
                wo: gaussian(&mut rng, &[h, h], scales.layer)?,
                mlp_norm: Tensor::full(&[h], T::one()),
                w_up: gaussian(&mut rng, &[h, m], scales.layer)?,
                w_down: gaussian(&mut rng, &[m, h], scales.layer)?,
            });
        }
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            final_norm: Tensor::full(&[h], T::one()),
        })
    }

    /// Named tensors in a fixed order, used by the weight file.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("attn_norm", &l.attn_norm),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("mlp_norm", &l.mlp_norm),
                ("w_up", &l.w_up),
                ("w_down", &l.w_down),
            ] {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out
    }

    /// Rebuilds weights from named tensors, checking every shape against `cfg`.
    pub fn from_named(
        cfg: &ModelConfig,
        mut named: std::collections::HashMap<String, Tensor<T>>,
    ) -> Result<Self, ModelError> {
        let h = cfg.hidden;
        let m = cfg.mlp_hidden();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<T>, ModelError> {
            let t = named
                .remove(name)
                .ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(ModelError::Format(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let token_embedding = take("token_embedding", &[cfg.vocab_size, h])?;
        let position_embedding = take("position_embedding", &[cfg.max_seq_len, h])?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = |n: &str| format!("layers.{i}.{n}");
            layers.push(LayerWeights {
                attn_norm: take(&p("attn_norm"), &[h])?,
                wq: take(&p("wq"), &[h, h])?,
                wk: take(&p("wk"), &[h, h])?,
                wv: take(&p("wv"), &[h, h])?,
                wo: take(&p("wo"), &[h, h])?,
                mlp_norm: take(&p("mlp_norm"), &[h])?,
                w_up: take(&p("w_up"), &[h, m])?,
                w_down: take(&p("w_down"), &[m, h])?,
            });
        }
        let final_norm = take("final_norm", &[h])?;
        let w = Self {
            token_embedding,
            position_embedding,
            layers,
            final_norm,
        };
        w.check_invariants()?;
        Ok(w)
    }

    /// All entries finite and token-embedding rows pairwise distinct.
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        if let Some((name, _)) = self.named_tensors().into_iter().find(|(_, t)| !t.is_finite()) {
            return Err(ModelError::Format(format!("tensor {name} has non-finite entries")));
        }
        if let Some((a, b)) = first_duplicate_row(&self.token_embedding) {
            return Err(ModelError::Format(format!("embedding rows {a} and {b} are identical")));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            token_embedding: self.token_embedding.cast(),
            position_embedding: self.position_embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: l.attn_norm.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    mlp_norm: l.mlp_norm.cast(),
                    w_up: l.w_up.cast(),
                    w_down: l.w_down.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
        }
    }
}

pub(crate) fn gaussian<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Result<Tensor<T>, ModelError> {
    let n: usize = shape.iter().product();
    if std == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    let dist = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

fn first_duplicate_row<T: Real>(table: &Tensor<T>) -> Option<(usize, usize)> {
    for i in 1..table.rows() {
        for j in 0..i {
            if table.row(i) == table.row(j) {
                return Some((j, i));
            }
        }
    }
    None
}

fn resample_duplicate_rows<T: Real>(rng: &mut ChaCha8Rng, table: &mut Tensor<T>, std: f64) -> Result<(), ModelError> {
    while let Some((_, dup)) = first_duplicate_row(table) {
        let fresh: Tensor<T> = gaussian(rng, &[table.cols()], std)?;
        table.row_mut(dup).copy_from_slice(fresh.data());
    }
    Ok(())
}
