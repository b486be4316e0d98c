use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::{gaussian, LayerWeights};
use crate::autodiff::{Graph, Var};
use crate::error::ModelError;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// A projection matrix inside a transformer block that an adapter can wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
    Up,
    Down,
}

impl Projection {
    pub const ALL: [Projection; 6] = [Self::Query, Self::Key, Self::Value, Self::Output, Self::Up, Self::Down];

    pub fn name(self) -> &'static str {
        match self {
            Self::Query => "wq",
            Self::Key => "wk",
            Self::Value => "wv",
            Self::Output => "wo",
            Self::Up => "w_up",
            Self::Down => "w_down",
        }
    }

    /// Accepts the weight name (`wq`), its short form (`q`, `up`) or the
    /// variant name (`query`), case-insensitively for the latter.
    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| {
            let short = p.name().trim_start_matches('w').trim_start_matches('_');
            p.name() == s || short == s || format!("{p:?}").eq_ignore_ascii_case(s)
        })
    }

    pub fn weight<T: Real>(self, layer: &LayerWeights<T>) -> &Tensor<T> {
        match self {
            Self::Query => &layer.wq,
            Self::Key => &layer.wk,
            Self::Value => &layer.wv,
            Self::Output => &layer.wo,
            Self::Up => &layer.w_up,
            Self::Down => &layer.w_down,
        }
    }

    /// `(in, out)` dimensions of the wrapped matrix.
    pub fn dims(self, cfg: &ModelConfig) -> (usize, usize) {
        let h = cfg.hidden;
        let m = cfg.mlp_hidden();
        match self {
            Self::Up => (h, m),
            Self::Down => (m, h),
            _ => (h, h),
        }
    }
}

/// Low-rank update `ΔW = (α/r) · B · A` for an `in × out` weight.
///
/// `b` is `in × r` and `a` is `r × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T: Real = f64> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub alpha: T,
}

impl<T: Real> LoraAdapter<T> {
    pub fn new(a: Tensor<T>, b: Tensor<T>, alpha: T) -> Result<Self, ModelError> {
        let (r, _) = (a.rows(), a.cols());
        if a.shape().len() != 2 || b.shape().len() != 2 || b.cols() != r || r == 0 {
            return Err(ModelError::Adapter(format!(
                "factor shapes {:?} and {:?} do not form a rank-r product",
                b.shape(),
                a.shape()
            )));
        }
        Ok(Self { a, b, alpha })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn scaling(&self) -> T {
        self.alpha / T::from_usize(self.rank()).unwrap_or_else(T::one)
    }

    /// `(α/r) · B · A`.
    pub fn delta(&self) -> Result<Tensor<T>, ModelError> {
        Ok(self.b.matmul(&self.a)?.scale(self.scaling())?)
    }
}

/// Adapters keyed by 1-based layer index and wrapped projection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdapterSet<T: Real = f64> {
    adapters: BTreeMap<(usize, Projection), LoraAdapter<T>>,
}

impl<T: Real> AdapterSet<T> {
    pub fn new() -> Self {
        Self {
            adapters: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, layer: usize, proj: Projection, adapter: LoraAdapter<T>) {
        self.adapters.insert((layer, proj), adapter);
    }

    pub fn get(&self, layer: usize, proj: Projection) -> Option<&LoraAdapter<T>> {
        self.adapters.get(&(layer, proj))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, Projection), &LoraAdapter<T>)> {
        self.adapters.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&(usize, Projection), &mut LoraAdapter<T>)> {
        self.adapters.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    /// Highest wrapped layer, or 0 when empty.
    pub fn max_layer(&self) -> usize {
        self.adapters.keys().map(|&(l, _)| l).max().unwrap_or(0)
    }

    /// Adapters on layers `1..=layers` and projections `wrapped`, with
    /// `A ~ N(0, a_std²)` and `B ~ N(0, b_std²)`.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        cfg: &ModelConfig,
        layers: usize,
        wrapped: &[Projection],
        rank: usize,
        alpha: f64,
        a_std: f64,
        b_std: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if rank == 0 {
            return Err(ModelError::Adapter("rank must be positive".into()));
        }
        if layers > cfg.layers {
            return Err(ModelError::LayerRange {
                start: 1,
                end: layers,
                layers: cfg.layers,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::new();
        for layer in 1..=layers {
            for &p in wrapped {
                let (din, dout) = p.dims(cfg);
                if rank >= din.min(dout) {
                    return Err(ModelError::Adapter(format!("rank {rank} not below min({din}, {dout})")));
                }
                let a = gaussian(&mut rng, &[rank, dout], a_std)?;
                let b = gaussian(&mut rng, &[din, rank], b_std)?;
                set.insert(layer, p, LoraAdapter::new(a, b, T::lit(alpha))?);
            }
        }
        Ok(set)
    }

    /// Registers every factor in `g` (as leaves when `trainable`).
    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> AdapterVars<T> {
        let mut vars = BTreeMap::new();
        for (&key, ad) in &self.adapters {
            let (a, b) = if trainable {
                (g.leaf(ad.a.clone()), g.leaf(ad.b.clone()))
            } else {
                (g.constant(ad.a.clone()), g.constant(ad.b.clone()))
            };
            vars.insert(
                key,
                AdapterVar {
                    a,
                    b,
                    scaling: ad.scaling(),
                },
            );
        }
        AdapterVars { vars }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterVar<T: Real> {
    pub a: Var,
    pub b: Var,
    pub scaling: T,
}

/// Graph handles for an [`AdapterSet`].
#[derive(Debug, Clone)]
pub struct AdapterVars<T: Real> {
    pub vars: BTreeMap<(usize, Projection), AdapterVar<T>>,
}

impl<T: Real> AdapterVars<T> {
    pub fn get(&self, layer: usize, proj: Projection) -> Option<&AdapterVar<T>> {
        self.vars.get(&(layer, proj))
    }
}
