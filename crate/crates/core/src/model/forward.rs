//! Transformer block evaluation, written once against [`Backend`] and run
//! either eagerly on tensors or recorded onto an autodiff [`Graph`].

use std::borrow::Cow;

use super::lora::{AdapterSet, AdapterVars, Projection};
use super::weights::LayerWeights;
use crate::autodiff::{Graph, Var};
use crate::error::TensorError;
use crate::scalar::Real;
use crate::tensor::{causal_attention, Tensor};

pub const RMS_EPS: f64 = 1e-6;

pub(crate) trait Backend<'w, T: Real> {
    type V;

    fn weight(&mut self, t: &'w Tensor<T>) -> Self::V;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    fn scale(&mut self, x: &Self::V, s: T) -> Result<Self::V, TensorError>;
    fn rmsnorm(&mut self, x: &Self::V, gain: &Self::V) -> Result<Self::V, TensorError>;
    fn gelu(&mut self, x: &Self::V) -> Result<Self::V, TensorError>;
    fn attention(&mut self, q: &Self::V, k: &Self::V, v: &Self::V, heads: usize) -> Result<Self::V, TensorError>;
    /// `(A, B, scaling)` of the adapter wrapping `proj` at 1-based `layer`.
    fn adapter(&mut self, layer: usize, proj: Projection) -> Option<(Self::V, Self::V, T)>;
}

/// Eager evaluation; weights are borrowed, intermediates owned.
pub(crate) struct Eager<'w, T: Real> {
    pub adapters: Option<&'w AdapterSet<T>>,
}

impl<'w, T: Real> Backend<'w, T> for Eager<'w, T> {
    type V = Cow<'w, Tensor<T>>;

    fn weight(&mut self, t: &'w Tensor<T>) -> Self::V {
        Cow::Borrowed(t)
    }

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError> {
        Ok(Cow::Owned(a.matmul(b)?))
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError> {
        Ok(Cow::Owned(a.add(b)?))
    }

    fn scale(&mut self, x: &Self::V, s: T) -> Result<Self::V, TensorError> {
        Ok(Cow::Owned(x.scale(s)?))
    }

    fn rmsnorm(&mut self, x: &Self::V, gain: &Self::V) -> Result<Self::V, TensorError> {
        Ok(Cow::Owned(x.rmsnorm(gain, T::lit(RMS_EPS))?))
    }

    fn gelu(&mut self, x: &Self::V) -> Result<Self::V, TensorError> {
        Ok(Cow::Owned(x.gelu()?))
    }

    fn attention(&mut self, q: &Self::V, k: &Self::V, v: &Self::V, heads: usize) -> Result<Self::V, TensorError> {
        Ok(Cow::Owned(causal_attention(q, k, v, heads)?.0))
    }

    fn adapter(&mut self, layer: usize, proj: Projection) -> Option<(Self::V, Self::V, T)> {
        let ad = self.adapters?.get(layer, proj)?;
        Some((Cow::Borrowed(&ad.a), Cow::Borrowed(&ad.b), ad.scaling()))
    }
}

/// Records every operation on a graph; weights enter as constants.
pub(crate) struct Recorder<'g, T: Real> {
    pub graph: &'g mut Graph<T>,
    pub adapters: Option<&'g AdapterVars<T>>,
}

impl<'w, T: Real> Backend<'w, T> for Recorder<'_, T> {
    type V = Var;

    fn weight(&mut self, t: &'w Tensor<T>) -> Var {
        self.graph.constant(t.clone())
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.graph.matmul(*a, *b)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.graph.add(*a, *b)
    }

    fn scale(&mut self, x: &Var, s: T) -> Result<Var, TensorError> {
        self.graph.scale(*x, s)
    }

    fn rmsnorm(&mut self, x: &Var, gain: &Var) -> Result<Var, TensorError> {
        self.graph.rmsnorm(*x, *gain, T::lit(RMS_EPS))
    }

    fn gelu(&mut self, x: &Var) -> Result<Var, TensorError> {
        self.graph.gelu(*x)
    }

    fn attention(&mut self, q: &Var, k: &Var, v: &Var, heads: usize) -> Result<Var, TensorError> {
        self.graph.causal_attention(*q, *k, *v, heads)
    }

    fn adapter(&mut self, layer: usize, proj: Projection) -> Option<(Var, Var, T)> {
        let ad = self.adapters?.get(layer, proj)?;
        Some((ad.a, ad.b, ad.scaling))
    }
}

/// `x · W`, plus `scaling · (x · B) · A` when an adapter wraps `W`.
pub(crate) fn project<'w, T: Real, B: Backend<'w, T>>(
    b: &mut B,
    lw: &'w LayerWeights<T>,
    layer: usize,
    proj: Projection,
    x: &B::V,
) -> Result<B::V, TensorError> {
    let w = b.weight(proj.weight(lw));
    let y = b.matmul(x, &w)?;
    match b.adapter(layer, proj) {
        None => Ok(y),
        Some((a, bb, s)) => {
            let xb = b.matmul(x, &bb)?;
            let d = b.matmul(&xb, &a)?;
            let d = b.scale(&d, s)?;
            b.add(&y, &d)
        }
    }
}

/// MLP half of a block: `x + Down(gelu(Up(rmsnorm(x))))`.
pub(crate) fn mlp_residual<'w, T: Real, B: Backend<'w, T>>(
    b: &mut B,
    lw: &'w LayerWeights<T>,
    layer: usize,
    x: &B::V,
) -> Result<B::V, TensorError> {
    let gain = b.weight(&lw.mlp_norm);
    let n = b.rmsnorm(x, &gain)?;
    let up = project(b, lw, layer, Projection::Up, &n)?;
    let act = b.gelu(&up)?;
    let down = project(b, lw, layer, Projection::Down, &act)?;
    b.add(x, &down)
}

/// One pre-norm block; `layer` is 1-based.
pub(crate) fn block<'w, T: Real, B: Backend<'w, T>>(
    b: &mut B,
    lw: &'w LayerWeights<T>,
    layer: usize,
    heads: usize,
    x: &B::V,
) -> Result<B::V, TensorError> {
    let gain = b.weight(&lw.attn_norm);
    let n = b.rmsnorm(x, &gain)?;
    let q = project(b, lw, layer, Projection::Query, &n)?;
    let k = project(b, lw, layer, Projection::Key, &n)?;
    let v = project(b, lw, layer, Projection::Value, &n)?;
    let att = b.attention(&q, &k, &v, heads)?;
    let o = project(b, lw, layer, Projection::Output, &att)?;
    let x = b.add(x, &o)?;
    mlp_residual(b, lw, layer, &x)
}
