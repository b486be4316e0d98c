//! Dense row-major tensors and the forward kernels used by the autodiff graph.
//!
//! Every kernel here is a plain sequential loop with a fixed reduction order,
//! so the same inputs always produce the same bits. Row `i` of any row-wise
//! kernel (matmul, rmsnorm, attention) depends only on row `i` of its row
//! inputs, which lets incremental evaluation reproduce a full forward pass
//! exactly.

use std::fmt;

use crate::error::TensorError;
use crate::scalar::Real;

/// Constant used in place of `-inf` for masked attention logits.
pub const MASK_VALUE: f64 = -1e9;

/// Dense tensor with row-major storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ..")?;
        }
        write!(f, "]")
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::InvalidShape { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    /// Converts from `f64` storage, e.g. after reading a weight file.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.shape.first().copied().unwrap_or(1)
        }
    }

    /// Row `i` of a 2-D tensor.
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self, TensorError> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        if self.shape.len() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: self.shape.clone(),
            })
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.shape.clone(), data)?.ensure_finite(op)
    }

    /// Dense product `self[m×k] · rhs[k×n]`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = rhs.expect_matrix("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Self::new(vec![m, n], out)?.ensure_finite("matmul")
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self, TensorError> {
        let (k, m) = self.expect_matrix("matmul_tn")?;
        let (k2, n) = rhs.expect_matrix("matmul_tn")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_tn",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &rhs.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Self::new(vec![m, n], out)?.ensure_finite("matmul_tn")
    }

    /// `self · rhsᵀ` without materialising the transpose.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.expect_matrix("matmul_nt")?;
        let (n, k2) = rhs.expect_matrix("matmul_nt")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(a_row, &rhs.data[j * k..(j + 1) * k]);
            }
        }
        Self::new(vec![m, n], out)?.ensure_finite("matmul_nt")
    }

    pub fn transpose(&self) -> Result<Self, TensorError> {
        let (m, n) = self.expect_matrix("transpose")?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::new(vec![n, m], out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, TensorError> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, TensorError> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self, TensorError> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Result<Self, TensorError> {
        self.map(|v| v * s).ensure_finite("scale")
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self, TensorError> {
        let (m, n) = self.expect_matrix("add_row")?;
        if bias.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut out = self.data.clone();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(&bias.data) {
                *o = *o + b;
            }
        }
        Self::new(self.shape.clone(), out)?.ensure_finite("add_row")
    }

    /// Softmax along `axis`, stabilised by subtracting the maximum.
    pub fn softmax(&self, axis: usize) -> Result<Self, TensorError> {
        let (outer, len, inner) = self.axis_split(axis, "softmax")?;
        let mut out = self.data.clone();
        let mut buf = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                for (a, b) in buf.iter_mut().enumerate() {
                    *b = self.data[idx(a)];
                }
                softmax_in_place(&mut buf);
                for (a, &b) in buf.iter().enumerate() {
                    out[idx(a)] = b;
                }
            }
        }
        Self::new(self.shape.clone(), out)?.ensure_finite("softmax")
    }

    pub(crate) fn axis_split(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        if axis >= self.shape.len() {
            return Err(TensorError::InvalidAxis {
                op,
                axis,
                rank: self.shape.len(),
            });
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// RMS normalisation of each row followed by an elementwise gain.
    pub fn rmsnorm(&self, gain: &Self, eps: T) -> Result<Self, TensorError> {
        let (m, n) = self.expect_matrix("rmsnorm")?;
        if gain.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "rmsnorm",
                left: self.shape.clone(),
                right: gain.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            rmsnorm_row(
                &self.data[i * n..(i + 1) * n],
                &gain.data,
                eps,
                &mut out[i * n..(i + 1) * n],
            );
        }
        Self::new(self.shape.clone(), out)?.ensure_finite("rmsnorm")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Self, TensorError> {
        self.map(gelu).ensure_finite("gelu")
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self, TensorError> {
        let (m, n) = self.expect_matrix("slice_rows")?;
        if start > end || end > m {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                index: end,
                bound: m,
            });
        }
        Self::new(vec![end - start, n], self.data[start * n..end * n].to_vec())
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self, TensorError> {
        let Some(first) = parts.first() else {
            return Err(TensorError::Empty { op: "concat_rows" });
        };
        let (_, n) = first.expect_matrix("concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (m, n2) = p.expect_matrix("concat_rows")?;
            if n2 != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            rows += m;
            data.extend_from_slice(&p.data);
        }
        Self::new(vec![rows, n], data)
    }

    /// Gathers rows of `self` (a `|V|×h` table) by index.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Self, TensorError> {
        let (v, h) = self.expect_matrix("embedding_lookup")?;
        let mut data = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(TensorError::OutOfRange {
                    op: "embedding_lookup",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(self.row(id));
        }
        Self::new(vec![ids.len(), h], data)
    }

    /// Squared Euclidean norm of all entries.
    pub fn l2_norm_sq(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub fn dist_sq<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

pub(crate) fn softmax_in_place<T: Real>(buf: &mut [T]) {
    let max = buf.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in buf.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in buf.iter_mut() {
        *v = *v / sum;
    }
}

pub(crate) fn rmsnorm_row<T: Real>(x: &[T], gain: &[T], eps: T, out: &mut [T]) {
    let inv = rms_inverse(x, eps);
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * g;
    }
}

#[inline]
pub(crate) fn rms_inverse<T: Real>(x: &[T], eps: T) -> T {
    let n = T::from_usize(x.len()).unwrap_or_else(T::one);
    let ms = x.iter().fold(T::zero(), |acc, &v| acc + v * v) / n;
    T::one() / (ms + eps).sqrt()
}

const GELU_COEFF: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::lit(GELU_COEFF) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(GELU_COEFF);
    let t = (c * (x + k * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// Multi-head causal self-attention over projected `q`, `k`, `v` (each `s×h`).
///
/// Returns the attention output and the per-head probability matrices
/// (`heads×s×s`, row-major), which the backward pass reuses.
pub fn causal_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Vec<T>), TensorError> {
    let (s, h) = q.expect_matrix("causal_attention")?;
    k.same_shape(q, "causal_attention")?;
    v.same_shape(q, "causal_attention")?;
    if heads == 0 || h % heads != 0 {
        return Err(TensorError::InvalidHeads { hidden: h, heads });
    }
    let hd = h / heads;
    let mut out = vec![T::zero(); s * h];
    let mut probs = vec![T::zero(); heads * s * s];
    for head in 0..heads {
        for i in 0..s {
            let p = &mut probs[(head * s + i) * s..(head * s + i + 1) * s];
            attend_row(
                &q.row(i)[head * hd..(head + 1) * hd],
                |j| &k.row(j)[head * hd..(head + 1) * hd],
                |j| &v.row(j)[head * hd..(head + 1) * hd],
                i,
                p,
                &mut out[i * h + head * hd..i * h + (head + 1) * hd],
            );
        }
    }
    Ok((Tensor::new(vec![s, h], out)?.ensure_finite("causal_attention")?, probs))
}

/// One query row of one head attending over keys `0..probs.len()`.
///
/// Keys after `last` are masked with [`MASK_VALUE`] before the stabilised
/// softmax; the masked probabilities underflow to exactly zero.
pub(crate) fn attend_row<'a, T: Real>(
    q: &[T],
    key: impl Fn(usize) -> &'a [T],
    value: impl Fn(usize) -> &'a [T],
    last: usize,
    probs: &mut [T],
    out: &mut [T],
) {
    let scale = T::one() / T::from_usize(q.len()).unwrap_or_else(T::one).sqrt();
    for (j, p) in probs.iter_mut().enumerate() {
        *p = if j <= last {
            dot(q, key(j)) * scale
        } else {
            T::lit(MASK_VALUE)
        };
    }
    softmax_in_place(probs);
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for (j, &p) in probs.iter().enumerate() {
        for (o, &vv) in out.iter_mut().zip(value(j)) {
            *o = *o + p * vv;
        }
    }
}
