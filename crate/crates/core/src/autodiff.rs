//! Append-only computation graph with reverse-mode differentiation.
//!
//! Nodes are stored in creation order, which is a valid topological order,
//! so `backward` is a single reverse sweep that visits each node once.

use crate::error::TensorError;
use crate::scalar::Real;
use crate::tensor::{self, causal_attention, dist_sq, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        eps: T,
    },
    Gelu(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Transpose(Var),
    EmbeddingLookup {
        table: Var,
        ids: Vec<usize>,
    },
    L2NormSq(Var),
    Sum(Var),
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    NearestRowDistSq {
        x: Var,
        table: Tensor<T>,
        nearest: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Single-owner tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Real = f64> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `var`; zeros when the loss does
    /// not depend on it.
    pub fn get(&self, var: Var) -> Tensor<T> {
        match self.grads.get(var.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        match self.grads.get_mut(var.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var, TensorError> {
        let out = self.value(x).scale(s)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Scale(x, s), out, rg))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let out = self.value(x).add_row(self.value(bias))?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddRow(x, bias), out, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let out = self.value(x).softmax(axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Softmax { x, axis }, out, rg))
    }

    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var, TensorError> {
        let out = self.value(x).rmsnorm(self.value(gain), eps)?;
        let rg = self.rg(&[x, gain]);
        Ok(self.push(Op::RmsNorm { x, gain, eps }, out, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).gelu()?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Gelu(x), out, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let out = self.value(x).slice_rows(start, end)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SliceRows { x, start }, out, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Transpose(x), out, rg))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(table).embedding_lookup(ids)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            out,
            rg,
        ))
    }

    pub fn l2_norm_sq(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(x).l2_norm_sq()).ensure_finite("l2_norm_sq")?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::L2NormSq(x), out, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(x).sum()).ensure_finite("sum")?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Sum(x), out, rg))
    }

    /// Fused multi-head causal self-attention on already projected inputs.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, TensorError> {
        let (out, probs) = causal_attention(self.value(q), self.value(k), self.value(v), heads)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(Op::CausalAttention { q, k, v, heads, probs }, out, rg))
    }

    /// `Σ_i min_t ‖x_i − table_t‖²` over the rows of `x`.
    ///
    /// The gradient treats each row's nearest table row as fixed; ties go to
    /// the smaller row index.
    pub fn nearest_row_dist_sq(&mut self, x: Var, table: &Tensor<T>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || table.shape().len() != 2 || xv.cols() != table.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "nearest_row_dist_sq",
                left: xv.shape().to_vec(),
                right: table.shape().to_vec(),
            });
        }
        if table.rows() == 0 {
            return Err(TensorError::Empty {
                op: "nearest_row_dist_sq",
            });
        }
        let mut total = T::zero();
        let mut nearest = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let (best, d) = nearest_row(xv.row(i), table);
            nearest.push(best);
            total = total + d;
        }
        let out = Tensor::scalar(total).ensure_finite("nearest_row_dist_sq")?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Op::NearestRowDistSq {
                x,
                table: table.clone(),
                nearest,
            },
            out,
            rg,
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<(), TensorError> {
        if !self.wants(v) {
            return Ok(());
        }
        let slot = &mut grads[v.0];
        *slot = Some(match slot.take() {
            Some(prev) => prev.add(&g)?,
            None => g,
        });
        Ok(())
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), TensorError> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let ga = g.matmul_nt(self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let gb = self.value(*a).matmul_tn(g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v))?;
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?)?;
                }
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, g.scale(*s)?)?;
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone())?;
                if self.wants(*bias) {
                    let n = g.cols();
                    let mut gb = vec![T::zero(); n];
                    for i in 0..g.rows() {
                        for (acc, &v) in gb.iter_mut().zip(g.row(i)) {
                            *acc = *acc + v;
                        }
                    }
                    let gb = Tensor::new(self.value(*bias).shape().to_vec(), gb)?;
                    self.accumulate(grads, *bias, gb)?;
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = out.axis_split(*axis, "softmax")?;
                let s = out.data();
                let gd = g.data();
                let mut gx = vec![T::zero(); s.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let mut dotp = T::zero();
                        for a in 0..len {
                            dotp = dotp + gd[idx(a)] * s[idx(a)];
                        }
                        for a in 0..len {
                            gx[idx(a)] = s[idx(a)] * (gd[idx(a)] - dotp);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), gx)?)?;
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x);
                let gainv = self.value(*gain);
                let (m, n) = (xv.rows(), xv.cols());
                let nf = T::from_usize(n).unwrap_or_else(T::one);
                let mut gx = vec![T::zero(); m * n];
                let mut gg = vec![T::zero(); n];
                for i in 0..m {
                    let xr = xv.row(i);
                    let gr = g.row(i);
                    let inv = tensor::rms_inverse(xr, *eps);
                    let mut proj = T::zero();
                    for j in 0..n {
                        proj = proj + gr[j] * gainv.data()[j] * xr[j];
                    }
                    let coeff = inv * inv * inv * proj / nf;
                    for j in 0..n {
                        gx[i * n + j] = inv * gr[j] * gainv.data()[j] - xr[j] * coeff;
                        gg[j] = gg[j] + gr[j] * xr[j] * inv;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
                if self.wants(*gain) {
                    self.accumulate(grads, *gain, Tensor::new(gainv.shape().to_vec(), gg)?)?;
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let gx = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| gi * tensor::gelu_grad(xi))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let n = xv.cols();
                gx.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, gx)?;
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.wants(p) {
                        self.accumulate(grads, p, g.slice_rows(row, row + r)?)?;
                    }
                    row += r;
                }
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, g.transpose()?)?;
            }
            Op::EmbeddingLookup { table, ids } => {
                let tv = self.value(*table);
                let mut gt = Tensor::zeros(tv.shape());
                for (i, &id) in ids.iter().enumerate() {
                    for (acc, &v) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *acc = *acc + v;
                    }
                }
                self.accumulate(grads, *table, gt)?;
            }
            Op::L2NormSq(x) => {
                let s = g.data()[0] * T::lit(2.0);
                self.accumulate(grads, *x, self.value(*x).scale(s)?)?;
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g.data()[0]))?;
            }
            Op::CausalAttention { q, k, v, heads, probs } => {
                let (gq, gk, gv) =
                    attention_backward(self.value(*q), self.value(*k), self.value(*v), *heads, probs, g)?;
                self.accumulate(grads, *q, gq)?;
                self.accumulate(grads, *k, gk)?;
                self.accumulate(grads, *v, gv)?;
            }
            Op::NearestRowDistSq { x, table, nearest } => {
                let xv = self.value(*x);
                let two_g = g.data()[0] * T::lit(2.0);
                let mut gx = Tensor::zeros(xv.shape());
                for (i, &t) in nearest.iter().enumerate() {
                    for ((o, &xi), &ti) in gx.row_mut(i).iter_mut().zip(xv.row(i)).zip(table.row(t)) {
                        *o = two_g * (xi - ti);
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
        }
        Ok(())
    }
}

/// Index and squared distance of the table row nearest to `x`; ties go to the
/// smaller index.
pub fn nearest_row<T: Real>(x: &[T], table: &Tensor<T>) -> (usize, T) {
    let mut best = 0;
    let mut best_d = T::infinity();
    for t in 0..table.rows() {
        let d = dist_sq(x, table.row(t));
        if d < best_d {
            best = t;
            best_d = d;
        }
    }
    (best, best_d)
}

#[allow(clippy::type_complexity)]
fn attention_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    probs: &[T],
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), TensorError> {
    let (s, h) = (q.rows(), q.cols());
    let hd = h / heads;
    let scale = T::one() / T::from_usize(hd).unwrap_or_else(T::one).sqrt();
    let mut gq = Tensor::zeros(&[s, h]);
    let mut gk = Tensor::zeros(&[s, h]);
    let mut gv = Tensor::zeros(&[s, h]);
    let mut dp = vec![T::zero(); s];
    for head in 0..heads {
        let cols = head * hd..(head + 1) * hd;
        for i in 0..s {
            let p = &probs[(head * s + i) * s..(head * s + i + 1) * s];
            let go = &g.row(i)[cols.clone()];
            for j in 0..=i {
                dp[j] = tensor::dot(go, &v.row(j)[cols.clone()]);
                let pij = p[j];
                for (acc, &gval) in gv.row_mut(j)[cols.clone()].iter_mut().zip(go) {
                    *acc = *acc + pij * gval;
                }
            }
            let mut weighted = T::zero();
            for j in 0..=i {
                weighted = weighted + p[j] * dp[j];
            }
            for j in 0..=i {
                let ds = p[j] * (dp[j] - weighted) * scale;
                let kj = &k.row(j)[cols.clone()];
                for (acc, &kv) in gq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                    *acc = *acc + ds * kv;
                }
                let qi = &q.row(i)[cols.clone()];
                for (acc, &qv) in gk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                    *acc = *acc + ds * qv;
                }
            }
        }
    }
    Ok((gq, gk, gv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_gradients_are_kept() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let y = g.scale(x, 3.0).unwrap();
        let l = g.l2_norm_sq(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(y).data(), &[6.0, -12.0]);
        assert_eq!(grads.get(x).data(), &[18.0, -36.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item().unwrap(), 6.0);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let unused = g.leaf(Tensor::zeros(&[2, 2]));
        let y = g.l2_norm_sq(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::eye(2));
        let x = g.leaf(Tensor::eye(2));
        let y = g.matmul(a, x).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a), Tensor::zeros(&[2, 2]));
        assert_eq!(grads.get(x).data(), &[1.0; 4]);
    }

    #[test]
    fn nearest_rows_tie_to_smaller_index() {
        let table = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        assert_eq!(nearest_row(&[0.0], &table), (0, 1.0));
    }
}
