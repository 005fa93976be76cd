//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because operands always precede results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::exact::ExactSum;
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity applied after a linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Identity,
    Sigmoid,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl Activation {
    /// Tanh-form gelu.
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
                T::lit(0.5) * x * (T::one() + inner.tanh())
            }
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at `x`, given `y = apply(x)`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Gelu => {
                let c = T::lit(SQRT_2_OVER_PI);
                let a = T::lit(GELU_CUBIC);
                let inner = c * (x + a * x * x * x);
                let t = inner.tanh();
                let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
                T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    ScaleBy(Var, Var),
    Act(Var, Activation),
    Abs(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm {
        gamma: Var,
        beta: Var,
        x: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    MeanRows(Var),
    SumRows(Var),
    MatMulTn(Var, Var),
    MaxRows(Var, Vec<usize>),
    SumCols(Var),
    DivCol(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SegmentMean(Var, Vec<usize>),
    SumAll(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations, optionally bound to a [`ParamStore`].
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<T>>,
    store: Option<&'p ParamStore<T>>,
    bound: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            bound: BTreeMap::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            bound: BTreeMap::new(),
        }
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free leaf that does receive a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to the named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .and_then(|s| s.get(name))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.variable(value);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNt(a, b), &[a, b]))
    }

    /// `aᵀ · b`, reducing over the shared row axis with exact summation.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::dim(
                "matmul_tn",
                format!("{:?}ᵀ x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (k, m) = (av.cols(), bv.cols());
        let (at, bt) = (av.transpose(), bv.transpose());
        let mut out = Tensor::zeros(k, m);
        let mut acc = ExactSum::new();
        for p in 0..k {
            let ap = at.row(p);
            for j in 0..m {
                acc.clear();
                for (&x, &y) in ap.iter().zip(bt.row(j)) {
                    acc.add((x * y).as_f64());
                }
                out.set(p, j, T::lit(acc.value()));
            }
        }
        Ok(self.push(out, Op::MatMulTn(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// `x (n×d) + row (1×d)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        if self.shape(row) != (1, d) {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + {:?}", (n, d), self.shape(row)),
            ));
        }
        let mut value = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..n {
            for (o, &b) in value.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddConst(x), &[x])
    }

    /// `s · x` for a `1 × 1` tensor `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::dim(
                "scale_by",
                format!("scale must be 1x1, got {:?}", self.shape(s)),
            ));
        }
        let c = self.value(s).get(0, 0);
        let value = self.value(x).map(|v| v * c);
        Ok(self.push(value, Op::ScaleBy(s, x), &[s, x]))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let value = self.value(x).map(|v| act.apply(v));
        self.push(value, Op::Act(x, act), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x), &[x])
    }

    /// Row-wise softmax with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            let row = xv.row(i);
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let o = out.row_mut(i);
            let mut s = T::zero();
            for (oj, &xj) in o.iter_mut().zip(row) {
                *oj = (xj - m).exp();
                s += *oj;
            }
            for oj in o.iter_mut() {
                *oj /= s;
            }
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Per-row normalisation followed by `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (n, d) = self.shape(x);
        if d == 0 {
            return Err(Error::InvalidArgument(
                "layer_norm over zero columns".into(),
            ));
        }
        if eps <= T::zero() {
            return Err(Error::InvalidArgument("layer_norm eps must be > 0".into()));
        }
        if self.shape(gamma) != (1, d) || self.shape(beta) != (1, d) {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    (n, d),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let xv = self.value(x);
        if !xv.is_finite() {
            return Err(Error::Numeric("layer_norm input is not finite".into()));
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let df = T::from_usize_lossy(d);
        let mut xhat = Tensor::zeros(n, d);
        let mut out = Tensor::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(i);
            for (h, &v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            let o = out.row_mut(i);
            for j in 0..d {
                o[j] = g[j] * xhat.get(i, j) + b[j];
            }
        }
        let op = Op::LayerNorm {
            gamma,
            beta,
            x,
            xhat,
            inv_std,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }

    /// `n × d → 1 × d` column means, summed exactly.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, _) = self.shape(x);
        if n == 0 {
            return Err(Error::EmptyInput("mean over zero rows".into()));
        }
        let nf = T::from_usize_lossy(n);
        let out = exact_column_sums(self.value(x)).map(|v| v / nf);
        Ok(self.push(out, Op::MeanRows(x), &[x]))
    }

    /// `n × d → 1 × d` column sums, summed exactly.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let out = exact_column_sums(self.value(x));
        self.push(out, Op::SumRows(x), &[x])
    }

    /// `n × d → 1 × d` column maxima; ties resolve to the first row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        if n == 0 {
            return Err(Error::EmptyInput("max over zero rows".into()));
        }
        let mut out = Tensor::zeros(1, d);
        let mut arg = vec![0usize; d];
        for c in 0..d {
            let mut best = xv.get(0, c);
            for r in 1..n {
                let v = xv.get(r, c);
                if v > best {
                    best = v;
                    arg[c] = r;
                }
            }
            out.set(0, c, best);
        }
        Ok(self.push(out, Op::MaxRows(x, arg), &[x]))
    }

    /// `n × d → n × 1` row sums.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.rows();
        let data = (0..n).map(|i| xv.row(i).iter().copied().sum()).collect();
        let value = Tensor::from_vec(n, 1, data).expect("shape");
        self.push(value, Op::SumCols(x), &[x])
    }

    /// Divides row `i` of `x` by `s[i]` for an `n × 1` column `s`.
    pub fn div_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        if self.shape(s) != (n, 1) {
            return Err(Error::dim(
                "div_col",
                format!("{:?} / {:?}", (n, d), self.shape(s)),
            ));
        }
        let mut value = self.value(x).clone();
        for i in 0..n {
            let si = self.value(s).get(i, 0);
            for v in value.row_mut(i) {
                *v /= si;
            }
        }
        Ok(self.push(value, Op::DivCol(x, s), &[x, s]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::EmptyInput("concat_cols of nothing".into()))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != n) {
            return Err(Error::dim(
                "concat_cols",
                format!("row count {} vs {n}", self.shape(bad).0),
            ));
        }
        let width: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(n, width);
        for i in 0..n {
            let mut off = 0;
            for &p in parts {
                let r = self.value(p).row(i);
                out.row_mut(i)[off..off + r.len()].copy_from_slice(r);
                off += r.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        if start > end || end > d {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{end} of {d}"),
            ));
        }
        let xv = self.value(x);
        let mut out = Tensor::zeros(n, end - start);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::EmptyInput("concat_rows of nothing".into()))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != d) {
            return Err(Error::dim(
                "concat_rows",
                format!("column count {} vs {d}", self.shape(bad).1),
            ));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let n = parts.iter().map(|&p| self.shape(p).0).sum();
        let value = Tensor::from_vec(n, d, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Mean over consecutive row groups `offsets[k]..offsets[k+1]`; empty groups
    /// produce zero rows.
    pub fn segment_mean(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let (n, d) = self.shape(x);
        if offsets.is_empty()
            || offsets[0] != 0
            || *offsets.last().unwrap() != n
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::dim(
                "segment_mean",
                format!("offsets do not partition {n} rows"),
            ));
        }
        let groups = offsets.len() - 1;
        let xv = self.value(x);
        let mut out = Tensor::zeros(groups, d);
        let mut acc = ExactSum::new();
        for k in 0..groups {
            let (lo, hi) = (offsets[k], offsets[k + 1]);
            if lo == hi {
                continue;
            }
            let c = T::from_usize_lossy(hi - lo);
            for j in 0..d {
                acc.clear();
                for r in lo..hi {
                    acc.add(xv.get(r, j).as_f64());
                }
                out.set(k, j, T::lit(acc.value()) / c);
            }
        }
        Ok(self.push(out, Op::SegmentMean(x, offsets.to_vec()), &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::from_usize_lossy(n))
    }

    /// Gradients of the `1 × 1` node `out` with respect to every node that
    /// requires one.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.shape(out) != (1, 1) {
            return Err(Error::dim(
                "backward",
                format!("output must be 1x1, got {:?}", self.shape(out)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .bound
            .iter()
            .map(|(name, &v)| (name.clone(), v))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul_nt(self.value(*b)).expect("shape");
                    self.accum(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = self.value(*a).matmul_tn(g).expect("shape");
                    self.accum(grads, *b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul(self.value(*b)).expect("shape");
                    self.accum(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = g.matmul_tn(self.value(*a)).expect("shape");
                    self.accum(grads, *b, db);
                }
            }
            Op::Transpose(a) => self.accum(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accum(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    self.accum(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, row) => {
                self.accum(grads, *x, g.clone());
                if self.needs(*row) {
                    self.accum(grads, *row, column_sums(g));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accum(grads, *x, g.map(|v| v * c));
            }
            Op::AddConst(x) => self.accum(grads, *x, g.clone()),
            Op::ScaleBy(s, x) => {
                let c = self.value(*s).get(0, 0);
                if self.needs(*s) {
                    let ds = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&a, &b)| a * b)
                        .sum();
                    self.accum(grads, *s, Tensor::scalar(ds));
                }
                if self.needs(*x) {
                    self.accum(grads, *x, g.map(|v| v * c));
                }
            }
            Op::Act(x, act) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for ((o, &xi), &yi) in d
                    .data_mut()
                    .iter_mut()
                    .zip(xv.data())
                    .zip(node.value.data())
                {
                    *o *= act.derivative(xi, yi);
                }
                self.accum(grads, *x, d);
            }
            Op::Abs(x) => {
                let d = g.zip_map(self.value(*x), |gi, xi| {
                    if xi > T::zero() {
                        gi
                    } else if xi < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                });
                self.accum(grads, *x, d);
            }
            Op::Square(x) => {
                let d = g.zip_map(self.value(*x), |gi, xi| T::lit(2.0) * gi * xi);
                self.accum(grads, *x, d);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (n, d) = y.shape();
                let mut dx = Tensor::zeros(n, d);
                for i in 0..n {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yy), &gg) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = yy * (gg - s);
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::LayerNorm {
                gamma,
                beta,
                x,
                xhat,
                inv_std,
            } => {
                let (n, d) = xhat.shape();
                if self.needs(*gamma) {
                    let mut dg = Tensor::zeros(1, d);
                    for i in 0..n {
                        for ((o, &gi), &h) in
                            dg.data_mut().iter_mut().zip(g.row(i)).zip(xhat.row(i))
                        {
                            *o += gi * h;
                        }
                    }
                    self.accum(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    self.accum(grads, *beta, column_sums(g));
                }
                if self.needs(*x) {
                    let gam = self.value(*gamma).data();
                    let df = T::from_usize_lossy(d);
                    let mut dx = Tensor::zeros(n, d);
                    let mut dxh = vec![T::zero(); d];
                    for i in 0..n {
                        let gr = g.row(i);
                        let hr = xhat.row(i);
                        for j in 0..d {
                            dxh[j] = gr[j] * gam[j];
                        }
                        let m1 = dxh.iter().copied().sum::<T>() / df;
                        let m2 = dxh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / df;
                        let is = inv_std[i];
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = is * (dxh[j] - m1 - hr[j] * m2);
                        }
                    }
                    self.accum(grads, *x, dx);
                }
            }
            Op::MeanRows(x) => {
                let (n, d) = self.shape(*x);
                let inv = T::one() / T::from_usize_lossy(n);
                let mut dx = Tensor::zeros(n, d);
                for i in 0..n {
                    for (o, &gi) in dx.row_mut(i).iter_mut().zip(g.data()) {
                        *o = gi * inv;
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::SumRows(x) => {
                let (n, d) = self.shape(*x);
                let mut dx = Tensor::zeros(n, d);
                for i in 0..n {
                    dx.row_mut(i).copy_from_slice(g.data());
                }
                self.accum(grads, *x, dx);
            }
            Op::MatMulTn(a, b) => {
                if self.needs(*a) {
                    let da = self.value(*b).matmul_nt(g).expect("shape");
                    self.accum(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = self.value(*a).matmul(g).expect("shape");
                    self.accum(grads, *b, db);
                }
            }
            Op::MaxRows(x, arg) => {
                let (n, d) = self.shape(*x);
                let mut dx = Tensor::zeros(n, d);
                for (c, &r) in arg.iter().enumerate() {
                    dx.set(r, c, g.get(0, c));
                }
                self.accum(grads, *x, dx);
            }
            Op::SumCols(x) => {
                let (n, d) = self.shape(*x);
                let mut dx = Tensor::zeros(n, d);
                for i in 0..n {
                    let gi = g.get(i, 0);
                    for o in dx.row_mut(i) {
                        *o = gi;
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::DivCol(x, s) => {
                let n = self.shape(*x).0;
                let sv = self.value(*s);
                if self.needs(*x) {
                    let mut dx = g.clone();
                    for i in 0..n {
                        let si = sv.get(i, 0);
                        for o in dx.row_mut(i) {
                            *o /= si;
                        }
                    }
                    self.accum(grads, *x, dx);
                }
                if self.needs(*s) {
                    let xv = self.value(*x);
                    let mut ds = Tensor::zeros(n, 1);
                    for i in 0..n {
                        let si = sv.get(i, 0);
                        let acc: T = g.row(i).iter().zip(xv.row(i)).map(|(&a, &b)| a * b).sum();
                        ds.set(i, 0, -acc / (si * si));
                    }
                    self.accum(grads, *s, ds);
                }
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(n, w);
                        for i in 0..n {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        self.accum(grads, p, dp);
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (n, d) = self.shape(*x);
                let w = g.cols();
                let mut dx = Tensor::zeros(n, d);
                for i in 0..n {
                    dx.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                }
                self.accum(grads, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.needs(p) {
                        let dp = Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec())
                            .expect("shape");
                        self.accum(grads, p, dp);
                    }
                    off += r;
                }
            }
            Op::SegmentMean(x, offsets) => {
                let (n, d) = self.shape(*x);
                let mut dx = Tensor::zeros(n, d);
                for k in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[k], offsets[k + 1]);
                    if lo == hi {
                        continue;
                    }
                    let inv = T::one() / T::from_usize_lossy(hi - lo);
                    let gk = g.row(k);
                    for r in lo..hi {
                        for (o, &gg) in dx.row_mut(r).iter_mut().zip(gk) {
                            *o = gg * inv;
                        }
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let (n, d) = self.shape(*x);
                self.accum(grads, *x, Tensor::filled(n, d, g.get(0, 0)));
            }
        }
    }
}

fn exact_column_sums<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, d) = x.shape();
    let mut out = Tensor::zeros(1, d);
    let mut acc = ExactSum::new();
    for j in 0..d {
        acc.clear();
        for i in 0..n {
            acc.add(x.get(i, j).as_f64());
        }
        out.set(0, j, T::lit(acc.value()));
    }
    out
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a bound parameter. Parameters that were bound but did not
    /// influence the output get a zero tensor.
    pub fn param(&self, name: &str, like: &Tensor<T>) -> Tensor<T> {
        self.params
            .get(name)
            .and_then(|&v| self.get(v).cloned())
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    /// Gradients for every parameter in `store`, zero-filled for parameters
    /// that never entered the graph.
    pub fn for_store(&self, store: &ParamStore<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in store.iter() {
            out.insert(name, self.param(name, t)).expect("unique names");
        }
        out
    }

    /// Names of parameters that were bound into the graph.
    pub fn bound_params(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}
