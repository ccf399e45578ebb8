//! Matrix-level reverse-mode differentiation, parameter storage, MLPs and
//! first-order optimizers.
//!
//! Every value on a [`Tape`] is a 2-D [`Tensor`]; scalars are `1 x 1`.
//! Parameters live in a [`ParamStore`] and are bound as the first leaves of a
//! tape, so `Var(p)` is the leaf of parameter `p`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: [usize; 2], rhs: [usize; 2] },
    #[error("{op}: index {index} out of range {bound}")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("softmax over an empty set (segment {0})")]
    EmptySet(usize),
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("invalid optimizer setting: {0}")]
    BadOptimizer(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: [usize; 2],
    pub values: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: [rows, cols],
            values: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            shape: [rows, cols],
            values: vec![v; rows * cols],
        }
    }

    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self, DiffError> {
        if values.len() != rows * cols {
            return Err(DiffError::Shape {
                op: "tensor",
                lhs: [rows, cols],
                rhs: [values.len(), 1],
            });
        }
        Ok(Self {
            shape: [rows, cols],
            values,
        })
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: [1, 1],
            values: vec![v],
        }
    }

    pub fn row_vector(values: Vec<T>) -> Self {
        Self {
            shape: [1, values.len()],
            values,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, DiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DiffError::Shape {
                op: "from_rows",
                lhs: [rows.len(), cols],
                rhs: [0, 0],
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.shape[1]..(r + 1) * self.shape[1]]
    }

    /// The single entry of a `1 x 1` tensor.
    pub fn item(&self) -> T {
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    fn transpose(&self) -> Self {
        let [r, c] = self.shape;
        let mut out = Self::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.values[j * r + i] = self.values[i * c + j];
            }
        }
        out
    }

    fn matmul(&self, rhs: &Self) -> Self {
        let [r, k] = self.shape;
        let c = rhs.shape[1];
        let mut out = Self::zeros(r, c);
        for i in 0..r {
            let orow = &mut out.values[i * c..(i + 1) * c];
            for p in 0..k {
                let a = self.values[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &rhs.values[p * c..(p + 1) * c];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, T),
    Concat(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SegmentSum(usize, Vec<usize>),
    SegmentSoftmax(usize, Vec<usize>, usize),
    SumRows(usize),
    MeanRows(usize),
    SumCols(usize),
    SumAll(usize),
    Relu(usize),
    LeakyRelu(usize, T),
    Elu(usize, T),
    Sigmoid(usize),
    Mse(usize, usize),
    Reshape(usize),
    DotConst(usize, Tensor<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-use record of a forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: usize,
    backward_done: bool,
}

fn check_same<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), DiffError> {
    if a.shape != b.shape {
        return Err(DiffError::Shape {
            op,
            lhs: a.shape,
            rhs: b.shape,
        });
    }
    Ok(())
}

fn check_segments(op: &'static str, seg: &[usize], nseg: usize) -> Result<(), DiffError> {
    if let Some(&s) = seg.iter().find(|&&s| s >= nseg) {
        return Err(DiffError::Index { op, index: s, bound: nseg });
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: 0,
            backward_done: false,
        }
    }

    /// Fresh tape whose first leaves are the store's parameters, in id order.
    pub fn with_params(store: &ParamStore<T>) -> Self {
        let mut tape = Self::new();
        for t in &store.values {
            tape.push(t.clone(), Op::Leaf, true);
        }
        tape.params = store.len();
        tape
    }

    /// Drops everything except the bound parameter leaves and their values.
    pub fn reset(&mut self) {
        self.nodes.truncate(self.params);
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&self, id: ParamId) -> Var {
        debug_assert!(id.0 < self.params);
        Var(id.0)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass; `None` if `v` did not influence the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every bound parameter, zero where unused.
    pub fn param_grads(&self) -> Vec<Tensor<T>> {
        (0..self.params)
            .map(|p| {
                self.grad(Var(p))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[p].value.rows(), self.nodes[p].value.cols()))
            })
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite(name));
        }
        let rg = parents.iter().any(|&p| self.nodes[p].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// Differentiable input leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Value copy cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols() != vb.rows() {
            return Err(DiffError::Shape {
                op: "matmul",
                lhs: va.shape,
                rhs: vb.shape,
            });
        }
        let out = va.matmul(vb);
        self.derived("matmul", out, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_same(name, va, vb)?;
        let out = Tensor {
            shape: va.shape,
            values: va.values.iter().zip(&vb.values).map(|(&x, &y)| f(x, y)).collect(),
        };
        self.derived(name, out, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `a + 1 b` for a `1 x c` row `b` broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(DiffError::Shape {
                op: "add_bias",
                lhs: va.shape,
                rhs: vb.shape,
            });
        }
        let c = va.cols();
        let out = Tensor {
            shape: va.shape,
            values: va.values.iter().enumerate().map(|(k, &x)| x + vb.values[k % c]).collect(),
        };
        self.derived("add_bias", out, Op::AddBias(a.0, b.0), &[a.0, b.0])
    }

    /// Scales row `i` of `a` by `w[i]` for an `r x 1` column `w`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var, DiffError> {
        let (va, vw) = (&self.nodes[a.0].value, &self.nodes[w.0].value);
        if vw.cols() != 1 || vw.rows() != va.rows() {
            return Err(DiffError::Shape {
                op: "mul_col",
                lhs: va.shape,
                rhs: vw.shape,
            });
        }
        let c = va.cols().max(1);
        let out = Tensor {
            shape: va.shape,
            values: va.values.iter().enumerate().map(|(k, &x)| x * vw.values[k / c]).collect(),
        };
        self.derived("mul_col", out, Op::MulCol(a.0, w.0), &[a.0, w.0])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, DiffError> {
        let out = self.nodes[a.0].value.map(|x| x * s);
        self.derived("scale", out, Op::Scale(a.0, s), &[a.0])
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = parts.first().map_or(0, |v| self.nodes[v.0].value.rows());
        for v in parts {
            let s = self.nodes[v.0].value.shape;
            if s[0] != rows {
                return Err(DiffError::Shape {
                    op: "concat_cols",
                    lhs: [rows, 0],
                    rhs: s,
                });
            }
        }
        let cols: usize = parts.iter().map(|v| self.nodes[v.0].value.cols()).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in parts {
                values.extend_from_slice(self.nodes[v.0].value.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.derived("concat_cols", Tensor { shape: [rows, cols], values }, Op::Concat(ids.clone()), &ids)
    }

    /// Row `k` of the result is row `idx[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        if let Some(&i) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(DiffError::Index {
                op: "gather_rows",
                index: i,
                bound: va.rows(),
            });
        }
        let c = va.cols();
        let mut values = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            values.extend_from_slice(va.row(i));
        }
        self.derived(
            "gather_rows",
            Tensor {
                shape: [idx.len(), c],
                values,
            },
            Op::GatherRows(a.0, idx.to_vec()),
            &[a.0],
        )
    }

    /// Row `s` of the result sums the rows `k` of `a` with `seg[k] = s`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], nseg: usize) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        if seg.len() != va.rows() {
            return Err(DiffError::Shape {
                op: "segment_sum",
                lhs: va.shape,
                rhs: [seg.len(), 1],
            });
        }
        check_segments("segment_sum", seg, nseg)?;
        let c = va.cols();
        let mut out = Tensor::zeros(nseg, c);
        for (k, &s) in seg.iter().enumerate() {
            for j in 0..c {
                out.values[s * c + j] += va.values[k * c + j];
            }
        }
        self.derived("segment_sum", out, Op::SegmentSum(a.0, seg.to_vec()), &[a.0])
    }

    /// Softmax of an `r x 1` score column within each index set `{k : seg[k] = s}`.
    pub fn softmax_over_sets(&mut self, a: Var, seg: &[usize], nseg: usize) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        if va.cols() != 1 || seg.len() != va.rows() {
            return Err(DiffError::Shape {
                op: "softmax_over_sets",
                lhs: va.shape,
                rhs: [seg.len(), 1],
            });
        }
        check_segments("softmax_over_sets", seg, nseg)?;
        let mut max = vec![T::neg_infinity(); nseg];
        for (k, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(va.values[k]);
        }
        if let Some(s) = max.iter().position(|m| *m == T::neg_infinity()) {
            return Err(DiffError::EmptySet(s));
        }
        let ex: Vec<T> = seg.iter().enumerate().map(|(k, &s)| (va.values[k] - max[s]).exp()).collect();
        let mut denom = vec![T::zero(); nseg];
        for (k, &s) in seg.iter().enumerate() {
            denom[s] += ex[k];
        }
        let values = seg.iter().enumerate().map(|(k, &s)| ex[k] / denom[s]).collect();
        self.derived(
            "softmax_over_sets",
            Tensor {
                shape: [seg.len(), 1],
                values,
            },
            Op::SegmentSoftmax(a.0, seg.to_vec(), nseg),
            &[a.0],
        )
    }

    /// Sum over rows, `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        let c = va.cols();
        let mut out = Tensor::zeros(1, c);
        for r in 0..va.rows() {
            for j in 0..c {
                out.values[j] += va.values[r * c + j];
            }
        }
        self.derived("sum_rows", out, Op::SumRows(a.0), &[a.0])
    }

    /// Mean over rows, `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        let (r, c) = (va.rows(), va.cols());
        if r == 0 {
            return Err(DiffError::Shape {
                op: "mean_rows",
                lhs: va.shape,
                rhs: [1, c],
            });
        }
        let inv = T::one() / T::from_usize(r).unwrap();
        let mut out = Tensor::zeros(1, c);
        for i in 0..r {
            for j in 0..c {
                out.values[j] += va.values[i * c + j] * inv;
            }
        }
        self.derived("mean_rows", out, Op::MeanRows(a.0), &[a.0])
    }

    /// Sum within each row, `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        let c = va.cols();
        let values = (0..va.rows()).map(|r| va.values[r * c..(r + 1) * c].iter().copied().sum()).collect();
        self.derived(
            "sum_cols",
            Tensor {
                shape: [va.rows(), 1],
                values,
            },
            Op::SumCols(a.0),
            &[a.0],
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.nodes[a.0].value.values.iter().copied().sum();
        self.derived("sum_all", Tensor::scalar(s), Op::SumAll(a.0), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.nodes[a.0].value.map(|x| x.max(T::zero()));
        self.derived("relu", out, Op::Relu(a.0), &[a.0])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var, DiffError> {
        let out = self.nodes[a.0].value.map(|x| if x > T::zero() { x } else { slope * x });
        self.derived("leaky_relu", out, Op::LeakyRelu(a.0, slope), &[a.0])
    }

    pub fn elu(&mut self, a: Var, alpha: T) -> Result<Var, DiffError> {
        let out = self.nodes[a.0].value.map(|x| if x > T::zero() { x } else { alpha * x.exp_m1() });
        self.derived("elu", out, Op::Elu(a.0, alpha), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.nodes[a.0].value.map(sigmoid);
        self.derived("sigmoid", out, Op::Sigmoid(a.0), &[a.0])
    }

    /// Mean squared difference; `0` for empty operands.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_same("mse", va, vb)?;
        let n = va.len();
        let s = if n == 0 {
            T::zero()
        } else {
            va.values.iter().zip(&vb.values).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / T::from_usize(n).unwrap()
        };
        self.derived("mse", Tensor::scalar(s), Op::Mse(a.0, b.0), &[a.0, b.0])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        if va.len() != rows * cols {
            return Err(DiffError::Shape {
                op: "reshape",
                lhs: va.shape,
                rhs: [rows, cols],
            });
        }
        let out = Tensor {
            shape: [rows, cols],
            values: va.values.clone(),
        };
        self.derived("reshape", out, Op::Reshape(a.0), &[a.0])
    }

    /// `sum(a * w)` for a fixed, non-differentiated `w`.
    pub fn dot_const(&mut self, a: Var, w: Tensor<T>) -> Result<Var, DiffError> {
        let va = &self.nodes[a.0].value;
        check_same("dot_const", va, &w)?;
        let s = va.values.iter().zip(&w.values).map(|(&x, &y)| x * y).sum();
        self.derived("dot_const", Tensor::scalar(s), Op::DotConst(a.0, w), &[a.0])
    }

    pub fn apply_activation(&mut self, a: Var, act: Activation) -> Result<Var, DiffError> {
        match act {
            Activation::Identity => Ok(a),
            Activation::Relu => self.relu(a),
            Activation::LeakyRelu(s) => self.leaky_relu(a, T::lit(s)),
            Activation::Elu(al) => self.elu(a, T::lit(al)),
            Activation::Sigmoid => self.sigmoid(a),
        }
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.backward_done {
            return Err(DiffError::BackwardTwice);
        }
        let shape = self.nodes[loss.0].value.shape;
        if shape != [1, 1] {
            return Err(DiffError::NonScalarLoss(shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (k, g) in grads.iter_mut().enumerate() {
            if !self.nodes[k].requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let mut send = |target: usize, delta: Tensor<T>| {
            if !nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(acc) => acc.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |k: usize| &nodes[k].value;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[*a].requires_grad {
                    send(*a, g.matmul(&val(*b).transpose()));
                }
                if nodes[*b].requires_grad {
                    send(*b, val(*a).transpose().matmul(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::AddBias(a, b) => {
                send(*a, g.clone());
                let c = g.cols();
                let mut db = Tensor::zeros(1, c);
                for (k, &x) in g.values.iter().enumerate() {
                    db.values[k % c] += x;
                }
                send(*b, db);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, zip_with(g, vb, |x, y| x * y));
                send(*b, zip_with(g, va, |x, y| x * y));
            }
            Op::MulCol(a, w) => {
                let (va, vw) = (val(*a), val(*w));
                let c = va.cols().max(1);
                send(
                    *a,
                    Tensor {
                        shape: g.shape,
                        values: g.values.iter().enumerate().map(|(k, &x)| x * vw.values[k / c]).collect(),
                    },
                );
                let mut dw = Tensor::zeros(vw.rows(), 1);
                for (k, (&x, &y)) in g.values.iter().zip(&va.values).enumerate() {
                    dw.values[k / c] += x * y;
                }
                send(*w, dw);
            }
            Op::Scale(a, s) => send(*a, g.map(|x| x * *s)),
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    let mut d = Tensor::zeros(rows, c);
                    for r in 0..rows {
                        d.values[r * c..(r + 1) * c].copy_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    offset += c;
                    send(p, d);
                }
            }
            Op::GatherRows(a, idx) => {
                let va = val(*a);
                let c = va.cols();
                let mut d = Tensor::zeros(va.rows(), c);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        d.values[i * c + j] += g.values[k * c + j];
                    }
                }
                send(*a, d);
            }
            Op::SegmentSum(a, seg) => {
                let c = g.cols();
                let mut values = Vec::with_capacity(seg.len() * c);
                for &s in seg {
                    values.extend_from_slice(g.row(s));
                }
                send(
                    *a,
                    Tensor {
                        shape: [seg.len(), c],
                        values,
                    },
                );
            }
            Op::SegmentSoftmax(a, seg, nseg) => {
                let y = &nodes[id].value;
                let mut dot = vec![T::zero(); *nseg];
                for (k, &s) in seg.iter().enumerate() {
                    dot[s] += y.values[k] * g.values[k];
                }
                send(
                    *a,
                    Tensor {
                        shape: y.shape,
                        values: seg.iter().enumerate().map(|(k, &s)| y.values[k] * (g.values[k] - dot[s])).collect(),
                    },
                );
            }
            Op::SumRows(a) => {
                let [r, c] = val(*a).shape;
                send(
                    *a,
                    Tensor {
                        shape: [r, c],
                        values: (0..r * c).map(|k| g.values[k % c]).collect(),
                    },
                );
            }
            Op::MeanRows(a) => {
                let [r, c] = val(*a).shape;
                let inv = T::one() / T::from_usize(r).unwrap();
                send(
                    *a,
                    Tensor {
                        shape: [r, c],
                        values: (0..r * c).map(|k| g.values[k % c] * inv).collect(),
                    },
                );
            }
            Op::SumCols(a) => {
                let [r, c] = val(*a).shape;
                send(
                    *a,
                    Tensor {
                        shape: [r, c],
                        values: (0..r * c).map(|k| g.values[k / c.max(1)]).collect(),
                    },
                );
            }
            Op::SumAll(a) => {
                let [r, c] = val(*a).shape;
                send(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Relu(a) => send(*a, zip_with(g, val(*a), |d, x| if x > T::zero() { d } else { T::zero() })),
            Op::LeakyRelu(a, s) => send(*a, zip_with(g, val(*a), |d, x| if x > T::zero() { d } else { d * *s })),
            Op::Elu(a, al) => send(
                *a,
                zip_with(g, val(*a), |d, x| if x > T::zero() { d } else { d * *al * x.exp() }),
            ),
            Op::Sigmoid(a) => send(*a, zip_with(g, &nodes[id].value, |d, y| d * y * (T::one() - y))),
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = va.len();
                if n > 0 {
                    let k = T::lit(2.0) * g.item() / T::from_usize(n).unwrap();
                    let d = zip_with(va, vb, |x, y| k * (x - y));
                    send(*b, d.map(|x| -x));
                    send(*a, d);
                }
            }
            Op::Reshape(a) => send(
                *a,
                Tensor {
                    shape: val(*a).shape,
                    values: g.values.clone(),
                },
            ),
            Op::DotConst(a, w) => {
                let s = g.item();
                send(*a, w.map(|x| x * s));
            }
        }
    }
}

fn zip_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor {
        shape: a.shape,
        values: a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect(),
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, DiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&k| ParamId(k))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// `{name -> {shape, values}}`.
    pub fn to_checkpoint(&self) -> BTreeMap<String, Tensor<T>> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }

    /// Overwrites every parameter from a checkpoint with exactly matching names and shapes.
    pub fn load_checkpoint(&mut self, ckpt: &BTreeMap<String, Tensor<T>>) -> Result<(), DiffError> {
        if ckpt.len() != self.len() {
            return Err(DiffError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                ckpt.len()
            )));
        }
        for (k, name) in self.names.iter().enumerate() {
            let t = ckpt.get(name).ok_or_else(|| DiffError::UnknownParam(name.clone()))?;
            if t.shape != self.values[k].shape || t.values.len() != t.shape[0] * t.shape[1] {
                return Err(DiffError::Checkpoint(format!("shape mismatch for {name}")));
            }
        }
        for (k, name) in self.names.iter().enumerate() {
            self.values[k] = ckpt[name].clone();
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("tensor map serializes")
    }

    pub fn load_json(&mut self, s: &str) -> Result<(), DiffError> {
        let ckpt: BTreeMap<String, Tensor<T>> =
            serde_json::from_str(s).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        self.load_checkpoint(&ckpt)
    }
}

/// I.i.d. `N(0, stddev^2)` entries.
pub fn init_normal<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, stddev: f64, rng: &mut R) -> Tensor<T> {
    Tensor {
        shape: [rows, cols],
        values: (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * stddev)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Normal { std: f64 },
    /// `N(0, 2 / (fan_in + fan_out))`.
    GlorotNormal,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases alike.
    FanInUniform,
}

impl Init {
    pub fn sample<T: Real, R: Rng + ?Sized>(self, rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(rows, cols),
            Init::Normal { std } => init_normal(rows, cols, std, rng),
            Init::GlorotNormal => init_normal(rows, cols, (2.0 / (rows + cols).max(1) as f64).sqrt(), rng),
            Init::FanInUniform => fan_in_uniform(rows, cols, rows, rng),
        }
    }

    /// Bias row for a layer with `fan_in` inputs.
    pub fn sample_bias<T: Real, R: Rng + ?Sized>(self, fan_in: usize, cols: usize, rng: &mut R) -> Tensor<T> {
        match self {
            Init::FanInUniform => fan_in_uniform(1, cols, fan_in, rng),
            Init::GlorotNormal => Tensor::zeros(1, cols),
            other => other.sample(1, cols, rng),
        }
    }
}

fn fan_in_uniform<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor {
        shape: [rows, cols],
        values: (0..rows * cols).map(|_| T::lit(rng.random_range(-bound..=bound))).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Elu(f64),
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.01;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// `2 pi sigmoid(x)`, mapping onto `[0, 2 pi]`.
    SigmoidTimes2Pi,
}

/// Fully connected network `x W_1 + b_1 -> act -> ... -> x W_L + b_L -> out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
    pub hidden: Activation,
    pub output: OutputActivation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        widths: &[usize],
        hidden: Activation,
        output: OutputActivation,
        weight_init: Init,
        bias_init: Init,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        if widths.len() < 2 {
            return Err(DiffError::Shape {
                op: "mlp",
                lhs: [widths.len(), 0],
                rhs: [2, 0],
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            weights.push(store.add(format!("{prefix}.w{k}"), weight_init.sample(w[0], w[1], rng))?);
            biases.push(store.add(format!("{prefix}.b{k}"), bias_init.sample_bias(w[0], w[1], rng))?);
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            hidden,
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Applies the network row-wise to an `r x input_dim` input.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var, DiffError> {
        let last = self.weights.len() - 1;
        let mut h = x;
        for (k, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = tape.matmul(h, tape.param(w))?;
            h = tape.add_bias(z, tape.param(b))?;
            if k < last {
                h = tape.apply_activation(h, self.hidden)?;
            }
        }
        match self.output {
            OutputActivation::Identity => Ok(h),
            OutputActivation::SigmoidTimes2Pi => {
                let s = tape.sigmoid(h)?;
                tape.scale(s, T::TAU())
            }
        }
    }

    /// Tape-free evaluation on a single input row.
    pub fn eval<T: Real>(&self, store: &ParamStore<T>, x: &[T]) -> Result<Vec<T>, DiffError> {
        let mut tape = Tape::with_params(store);
        let xv = tape.constant(Tensor::row_vector(x.to_vec()));
        let y = self.forward(&mut tape, xv)?;
        Ok(tape.value(y).values.clone())
    }
}

/// Step decay `lr_t = lr_0 * factor^floor(t / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub schedule: Option<StepDecay>,
    steps: usize,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, schedule: Option<StepDecay>) -> Result<Self, DiffError> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(DiffError::BadOptimizer(format!("learning rate {learning_rate}")));
        }
        if let Some(s) = schedule {
            if s.every == 0 || !(s.factor > 0.0 && s.factor <= 1.0) {
                return Err(DiffError::BadOptimizer(format!("schedule {s:?}")));
            }
        }
        Ok(Self {
            kind,
            learning_rate,
            schedule,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn adam(learning_rate: f64) -> Result<Self, DiffError> {
        Self::new(OptimizerKind::ADAM, learning_rate, None)
    }

    pub fn sgd(learning_rate: f64) -> Result<Self, DiffError> {
        Self::new(OptimizerKind::Sgd, learning_rate, None)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Learning rate for the next step.
    pub fn current_lr(&self) -> f64 {
        match self.schedule {
            Some(s) => self.learning_rate * s.factor.powi((self.steps / s.every) as i32),
            None => self.learning_rate,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<(), DiffError> {
        if grads.len() != store.len() {
            return Err(DiffError::Shape {
                op: "optimizer",
                lhs: [store.len(), 0],
                rhs: [grads.len(), 0],
            });
        }
        for (k, g) in grads.iter().enumerate() {
            check_same("optimizer", &store.values[k], g)?;
            if !g.is_finite() {
                return Err(DiffError::NonFinite("gradient"));
            }
        }
        let lr = T::lit(self.current_lr());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in store.values.iter_mut().zip(grads) {
                    for (x, &d) in p.values.iter_mut().zip(&g.values) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
                    self.v = self.m.clone();
                }
                let t = (self.steps + 1) as i32;
                let (b1, b2, e) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let c1 = T::one() - T::lit(beta1.powi(t));
                let c2 = T::one() - T::lit(beta2.powi(t));
                for k in 0..grads.len() {
                    let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
                    for (i, &d) in g.values.iter().enumerate() {
                        m.values[i] = b1 * m.values[i] + (T::one() - b1) * d;
                        v.values[i] = b2 * v.values[i] + (T::one() - b2) * d * d;
                        let mh = m.values[i] / c1;
                        let vh = v.values[i] / c2;
                        store.values[k].values[i] -= lr * mh / (vh.sqrt() + e);
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}
