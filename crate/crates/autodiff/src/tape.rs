//! Operation tape and reverse-mode backward pass.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order. Backward walks it once from the output towards the
//! leaves; a node's gradient buffer is consumed when it is visited, which
//! is what guarantees each node is processed exactly once.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::{AutodiffError, ParamId, ParamStore, Result, Tensor};

/// Added to disallowed attention logits before the softmax.
pub const MASK_PENALTY: f64 = -1e9;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMask {
    None,
    /// Query `i` may only attend to keys `j <= i`.
    Causal,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather { table: Var, indices: Vec<usize> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<f64>,
        scale: f64,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SliceRows { src: Var, start: usize },
    ConcatRows(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Log(_) => "log",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Gather { .. } => "gather",
            Op::Attention { .. } => "attention",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatRows(_) => "concat_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to the parameters bound on a tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// `None` when the parameter was not bound on the tape. Bound but unused
    /// parameters get an all-zero tensor.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    /// Gradient for `id`, or zeros shaped like the stored parameter.
    pub fn get_or_zeros(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.by_param
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(id, t)| (*id, t))
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.by_param.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Elementwise sum; parameters present in only one side are copied.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(mine) => mine
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        let mut worst: f64 = 0.0;
        for (id, g) in &self.by_param {
            match other.by_param.get(id) {
                Some(h) => worst = worst.max(g.max_abs_diff(h)),
                None => worst = worst.max(g.data().iter().fold(0.0, |m, v| m.max(v.abs()))),
            }
        }
        for (id, h) in &other.by_param {
            if !self.by_param.contains_key(id) {
                worst = worst.max(h.data().iter().fold(0.0, |m, v| m.max(v.abs())));
            }
        }
        worst
    }
}

/// Records primitive operations for one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded variable.
    ///
    /// Panics if `v` was produced by another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AutodiffError::NotOnTape);
        }
        Ok(&self.nodes[v.index].value)
    }

    fn needs_grad(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        let index = self.nodes.len();
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: op.name(),
                node: index,
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// Binds a parameter as a differentiable leaf. Bind each parameter at
    /// most once per tape and reuse the returned variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.check(v)?;
        if t.shape().len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        mm_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs_grad(&[a, b]);
        self.push(Tensor::from_vec(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// `a (m x k) * b^T` where `b` is `n x k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_t")?;
        let (n, k2) = self.matrix(b, "matmul_t")?;
        if k != k2 {
            return Err(self.mismatch("matmul_t", a, b));
        }
        let mut out = vec![0.0; m * n];
        mm_t_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs_grad(&[a, b]);
        self.push(Tensor::from_vec(vec![m, n], out)?, Op::MatMulT(a, b), rg)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape() != tb.shape() {
            return Err(self.mismatch(name, a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the row vector `b` (length `n`) to every row of `a (m x n)`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "add_row")?;
        if self.check(b)?.len() != n {
            return Err(self.mismatch("add_row", a, b));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(bias).for_each(|(x, y)| *x += y);
        }
        let rg = self.needs_grad(&[a, b]);
        self.push(Tensor::from_vec(vec![m, n], data)?, Op::AddRow(a, b), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.check(a)?;
        let data = t.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::from_vec(t.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a]);
        self.push(value, op, rg)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::ln, Op::Log(a))
    }

    /// Numerically stable `log(sigmoid(a))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, log_sigmoid, Op::LogSigmoid(a))
    }

    fn rowwise(&mut self, a: Var, log: bool) -> Result<Var> {
        let t = self.check(a)?;
        let (_, n) = t.dims2();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            if log {
                log_softmax_in_place(row);
            } else {
                softmax_in_place(row);
            }
        }
        let value = Tensor::from_vec(t.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a]);
        let op = if log { Op::LogSoftmax(a) } else { Op::Softmax(a) };
        self.push(value, op, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(a, false)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(a, true)
    }

    /// Rows of `table` selected by `indices`, as an `indices.len() x cols`
    /// matrix.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.matrix(table, "gather")?;
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    rows,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::from_vec(vec![indices.len(), cols], data)?;
        let rg = self.needs_grad(&[table]);
        self.push(
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// Scaled dot-product attention `softmax(q k^T / sqrt(d) + mask) v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: AttentionMask) -> Result<Var> {
        let (lq, d) = self.matrix(q, "attention")?;
        let (lk, dk) = self.matrix(k, "attention")?;
        let (lv, dv) = self.matrix(v, "attention")?;
        if d != dk {
            return Err(self.mismatch("attention", q, k));
        }
        if lk != lv {
            return Err(self.mismatch("attention", k, v));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut probs = vec![0.0; lq * lk];
        mm_t_acc(&mut probs, self.value(q).data(), self.value(k).data(), lq, d, lk);
        for (i, row) in probs.chunks_mut(lk).enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                *s *= scale;
                if mask == AttentionMask::Causal && j > i {
                    *s += MASK_PENALTY;
                }
            }
            softmax_in_place(row);
        }
        let mut out = vec![0.0; lq * dv];
        mm_acc(&mut out, &probs, self.value(v).data(), lq, lk, dv);
        let rg = self.needs_grad(&[q, k, v]);
        self.push(
            Tensor::from_vec(vec![lq, dv], out)?,
            Op::Attention {
                q,
                k,
                v,
                probs,
                scale,
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.check(a)?.data().iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.check(a)?;
        let m = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Sums over the last axis: `m x n -> m x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "sum_rows")?;
        let data = self
            .value(a)
            .data()
            .chunks(n.max(1))
            .map(|r| r.iter().sum())
            .collect();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::from_vec(vec![m, 1], data)?, Op::SumRows(a), rg)
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix(a, "slice_rows")?;
        if start >= end || end > m {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                rows: m,
            });
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(
            Tensor::from_vec(vec![end - start, n], data)?,
            Op::SliceRows { src: a, start },
            rg,
        )
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat_rows",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (_, n) = self.matrix(first, "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, np) = self.matrix(p, "concat_rows")?;
            if np != n {
                return Err(self.mismatch("concat_rows", first, p));
            }
            data.extend_from_slice(self.value(p).data());
            rows += m;
        }
        let rg = self.needs_grad(parts);
        self.push(
            Tensor::from_vec(vec![rows, n], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.check(output)?;
        if out.len() != 1 {
            return Err(AutodiffError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.index + 1];
        grads[output.index] = Some(vec![1.0]);
        let mut result = Gradients::default();

        for i in (0..=output.index).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = Accumulator {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let t = Tensor::from_vec(node.value.shape().to_vec(), g)?;
                    let mut single = Gradients::default();
                    single.by_param.insert(*id, t);
                    result.accumulate(&single);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = self.value(*b).dims2().1;
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    acc.with(*a, |da| mm_t_acc(da, &g, bv, m, n, k));
                    acc.with(*b, |db| t_mm_acc(db, av, &g, m, k, n));
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = self.value(*b).dims2().0;
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    acc.with(*a, |da| mm_acc(da, &g, bv, m, n, k));
                    acc.with(*b, |db| t_mm_acc(db, &g, av, m, n, k));
                }
                Op::Add(a, b) => {
                    acc.with(*a, |da| add_into(da, &g));
                    acc.with(*b, |db| add_into(db, &g));
                }
                Op::Sub(a, b) => {
                    acc.with(*a, |da| add_into(da, &g));
                    acc.with(*b, |db| sub_into(db, &g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    acc.with(*a, |da| {
                        for ((d, gi), y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * y;
                        }
                    });
                    acc.with(*b, |db| {
                        for ((d, gi), x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * x;
                        }
                    });
                }
                Op::AddRow(a, b) => {
                    let n = self.value(*b).len();
                    acc.with(*a, |da| add_into(da, &g));
                    acc.with(*b, |db| {
                        for row in g.chunks(n) {
                            add_into(db, row);
                        }
                    });
                }
                Op::Affine(a, s) => acc.with(*a, |da| {
                    for (d, gi) in da.iter_mut().zip(&g) {
                        *d += s * gi;
                    }
                }),
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    acc.with(*a, |da| {
                        for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                            *d += gi * yi * (1.0 - yi);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    acc.with(*a, |da| {
                        for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                            *d += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    acc.with(*a, |da| {
                        for ((d, gi), xi) in da.iter_mut().zip(&g).zip(x) {
                            if *xi > 0.0 {
                                *d += gi;
                            }
                        }
                    });
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    acc.with(*a, |da| {
                        for ((d, gi), xi) in da.iter_mut().zip(&g).zip(x) {
                            *d += gi / xi;
                        }
                    });
                }
                Op::LogSigmoid(a) => {
                    let x = self.value(*a).data();
                    acc.with(*a, |da| {
                        for ((d, gi), xi) in da.iter_mut().zip(&g).zip(x) {
                            *d += gi * sigmoid(-xi);
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let n = node.value.dims2().1.max(1);
                    acc.with(*a, |da| {
                        for ((drow, grow), yrow) in da.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                            let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                            for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += yi * (gi - dot);
                            }
                        }
                    });
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let n = node.value.dims2().1.max(1);
                    acc.with(*a, |da| {
                        for ((drow, grow), yrow) in da.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                            let total: f64 = grow.iter().sum();
                            for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += gi - yi.exp() * total;
                            }
                        }
                    });
                }
                Op::Gather { table, indices } => {
                    let cols = self.value(*table).dims2().1;
                    acc.with(*table, |dt| {
                        for (r, &i) in indices.iter().enumerate() {
                            add_into(&mut dt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    });
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    probs,
                    scale,
                } => {
                    let (lq, d) = self.value(*q).dims2();
                    let lk = self.value(*k).dims2().0;
                    let dv = self.value(*v).dims2().1;
                    let (qv, kv, vv) = (
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                    );
                    acc.with(*v, |dvv| t_mm_acc(dvv, probs, &g, lq, lk, dv));
                    let mut dp = vec![0.0; lq * lk];
                    mm_t_acc(&mut dp, &g, vv, lq, dv, lk);
                    for (drow, prow) in dp.chunks_mut(lk).zip(probs.chunks(lk)) {
                        let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                        for (ds, p) in drow.iter_mut().zip(prow) {
                            *ds = p * (*ds - dot) * scale;
                        }
                    }
                    acc.with(*q, |dq| mm_acc(dq, &dp, kv, lq, lk, d));
                    acc.with(*k, |dk| t_mm_acc(dk, &dp, qv, lq, lk, d));
                }
                Op::Sum(a) => acc.with(*a, |da| da.iter_mut().for_each(|d| *d += g[0])),
                Op::Mean(a) => {
                    let n = self.value(*a).len().max(1) as f64;
                    acc.with(*a, |da| da.iter_mut().for_each(|d| *d += g[0] / n));
                }
                Op::SumRows(a) => {
                    let n = self.value(*a).dims2().1.max(1);
                    acc.with(*a, |da| {
                        for (row, gi) in da.chunks_mut(n).zip(&g) {
                            row.iter_mut().for_each(|d| *d += gi);
                        }
                    });
                }
                Op::SliceRows { src, start } => {
                    let n = node.value.dims2().1;
                    acc.with(*src, |ds| add_into(&mut ds[start * n..start * n + g.len()], &g));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        acc.with(*p, |dp| add_into(dp, &g[offset..offset + len]));
                        offset += len;
                    }
                }
            }
        }
        Ok(result)
    }
}

struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Accumulator<'_> {
    fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.index];
        if !node.requires_grad {
            return;
        }
        let buf = self.grads[v.index].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(buf);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn sub_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d -= s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v -= lse);
}

/// `out (m x n) += a (m x k) * b (k x n)`
fn mm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += aip * bv);
        }
    }
}

/// `out (m x n) += a (m x k) * b^T`, `b` is `n x k`.
fn mm_t_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out (k x n) += a^T * b`, `a` is `m x k`, `b` is `m x n`.
fn t_mm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += aip * bv);
        }
    }
}
