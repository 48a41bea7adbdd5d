//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its output value and the indices of its inputs; nodes only
//! ever refer to earlier nodes, so walking the tape backwards is a valid
//! topological order. Learnable leaves are read out of a [`ParamStore`] and
//! [`Tape::backward`] adds their gradients back into that store.

use crate::autograd::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::autograd::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Source of one row of an embedding lookup.
#[derive(Clone, Debug, PartialEq)]
pub enum RowSource {
    /// Row `i` of the learnable table.
    Table(usize),
    /// A fixed row that receives no gradient.
    Fixed(Vec<f64>),
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather { table: ParamId, rows: Vec<Option<usize>> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Row { x: Var, row: usize },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    MeanRows(Var),
    Sum(Var),
    Mse(Var, Var),
    SquaredError(Var, Var),
    CrossEntropy { logits: Var, label: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn ensure_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if !t.is_matrix() {
        return Err(Error::shape(op, format!("expected a rank-2 tensor, got {:?}", t.shape())));
    }
    Ok((t.rows(), t.cols()))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Stacks rows taken from a `[B, d]` table or given explicitly.
    pub fn gather_rows(&mut self, store: &ParamStore, table: ParamId, rows: &[RowSource]) -> Result<Var> {
        let t = store.value(table);
        let (b, d) = ensure_matrix("gather_rows", t)?;
        let mut data = Vec::with_capacity(rows.len() * d);
        let mut idx = Vec::with_capacity(rows.len());
        for src in rows {
            match src {
                RowSource::Table(i) => {
                    if *i >= b {
                        return Err(Error::shape("gather_rows", format!("row {i} outside table of {b} rows")));
                    }
                    data.extend_from_slice(t.row_slice(*i));
                    idx.push(Some(*i));
                }
                RowSource::Fixed(row) => {
                    if row.len() != d {
                        return Err(Error::shape("gather_rows", format!("fixed row of width {} for table width {d}", row.len())));
                    }
                    data.extend_from_slice(row);
                    idx.push(None);
                }
            }
        }
        let value = Tensor::matrix(rows.len(), d, data)?;
        let rg = idx.iter().any(Option::is_some);
        Ok(self.push(value, Op::Gather { table, rows: idx }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = ensure_matrix("matmul", self.value(a))?;
        let (k2, n) = ensure_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]: inner dimensions differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = ensure_matrix("matmul_nt", self.value(a))?;
        let (n, k2) = ensure_matrix("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("[{m}, {k}] x [{n}, {k2}]ᵀ: inner dimensions differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = ensure_matrix("transpose", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Transpose(x), rg))
    }

    fn zip_same(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op_name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, op_name: &'static str, x: Var, r: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (m, n) = ensure_matrix(op_name, self.value(x))?;
        let (rr, rn) = ensure_matrix(op_name, self.value(r))?;
        if rr != 1 || rn != n {
            return Err(Error::shape(op_name, format!("cannot broadcast [{rr}, {rn}] over [{m}, {n}]")));
        }
        let row = self.value(r).data();
        let data = self
            .value(x)
            .data()
            .chunks(n.max(1))
            .flat_map(|chunk| chunk.iter().zip(row).map(|(&a, &b)| f(a, b)))
            .collect();
        let rg = self.rg(x) || self.rg(r);
        Ok(self.push(Tensor::matrix(m, n, data)?, op, rg))
    }

    /// `x[m,n] + r[1,n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, r, |a, b| a + b, Op::AddRow(x, r))
    }

    /// `x[m,n] ⊙ r[1,n]` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, r, |a, b| a * b, Op::MulRow(x, r))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Empty("concat_cols needs at least one input".into()));
        };
        let (m, _) = ensure_matrix("concat_cols", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = ensure_matrix("concat_cols", self.value(p))?;
            if pm != m {
                return Err(Error::shape("concat_cols", format!("row counts differ: {m} vs {pm}")));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = ensure_matrix("slice_cols", self.value(x))?;
        if start + len > n {
            return Err(Error::shape("slice_cols", format!("columns {start}..{} of {n}", start + len)));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&self.value(x).row_slice(i)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols { x, start }, rg))
    }

    /// Row `row` as a `[1, n]` tensor.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        let (m, _) = ensure_matrix("row", self.value(x))?;
        if row >= m {
            return Err(Error::shape("row", format!("row {row} of {m}")));
        }
        let value = Tensor::row(self.value(x).row_slice(row).to_vec());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Row { x, row }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Softmax along each row.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = ensure_matrix("softmax", self.value(x))?;
        if n == 0 {
            return Err(Error::Empty("softmax over an empty axis".into()));
        }
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::Softmax(x), rg))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` with no affine part.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (m, n) = ensure_matrix("layer_norm", self.value(x))?;
        if n == 0 {
            return Err(Error::Empty("layer_norm over an empty axis".into()));
        }
        let mut data = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::LayerNorm { x, inv_std }, rg))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = ensure_matrix("mean_rows", self.value(x))?;
        if m == 0 {
            return Err(Error::Empty("mean over zero rows".into()));
        }
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::row(out), Op::MeanRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mse", ta, tb)?;
        if ta.numel() == 0 {
            return Err(Error::Empty("mse of empty tensors".into()));
        }
        let sse: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(sse / ta.numel() as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mse(a, b), rg))
    }

    /// Sum of squared differences, i.e. the squared Euclidean norm of `a - b`.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("squared_error", ta, tb)?;
        let sse: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(sse), Op::SquaredError(a, b), rg))
    }

    /// Softmax cross-entropy of a `[1, C]` logit row against class `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (m, c) = ensure_matrix("cross_entropy", self.value(logits))?;
        if m != 1 {
            return Err(Error::shape("cross_entropy", format!("expected one logit row, got {m}")));
        }
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let z = self.value(logits).data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(lse - z[label]);
        let rg = self.rg(logits);
        Ok(self.push(value, Op::CrossEntropy { logits, label }, rg))
    }

    /// Accumulates `d loss / d param` into `store` for every parameter reachable from `loss`.
    ///
    /// Calling this twice without zeroing the store sums both passes.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let nodes = &self.nodes;
        // Adds into the adjoint of `v`, allocating it on first touch.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;
        let out = &node.value;

        match &node.op {
            Op::Constant => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::Gather { table, rows } => {
                let d = out.cols();
                for (r, idx) in rows.iter().enumerate() {
                    if let Some(i) = idx {
                        store.accumulate_grad_row(*table, *i, &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                acc(*a, &mut |da| gemm_nt_acc(g, val(*b).data(), da, m, n, k));
                acc(*b, &mut |db| gemm_tn_acc(val(*a).data(), g, db, m, k, n));
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                acc(*a, &mut |da| gemm_acc(g, val(*b).data(), da, m, n, k));
                acc(*b, &mut |db| gemm_tn_acc(g, val(*a).data(), db, m, n, k));
            }
            Op::Transpose(x) => {
                let (m, n) = (val(*x).rows(), val(*x).cols());
                acc(*x, &mut |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |da| {
                    for ((d, g), y) in da.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, g), x) in db.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::AddRow(x, r) => {
                let n = out.cols();
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*r, &mut |dr| {
                    for chunk in g.chunks(n.max(1)) {
                        dr.iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::MulRow(x, r) => {
                let n = out.cols();
                let (vx, vr) = (val(*x).data(), val(*r).data());
                acc(*x, &mut |dx| {
                    for (i, (d, g)) in dx.iter_mut().zip(g).enumerate() {
                        *d += g * vr[i % n];
                    }
                });
                acc(*r, &mut |dr| {
                    for (i, (g, xv)) in g.iter().zip(vx).enumerate() {
                        dr[i % n] += g * xv;
                    }
                });
            }
            Op::Scale(x, factor) => {
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor));
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |dp| {
                        for i in 0..m {
                            for j in 0..w {
                                dp[i * w + j] += g[i * n + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, w) = (out.rows(), out.cols());
                let n = val(*x).cols();
                acc(*x, &mut |dx| {
                    for i in 0..m {
                        for j in 0..w {
                            dx[i * n + start + j] += g[i * w + j];
                        }
                    }
                });
            }
            Op::Row { x, row } => {
                let n = out.cols();
                acc(*x, &mut |dx| {
                    dx[row * n..(row + 1) * n].iter_mut().zip(g).for_each(|(d, g)| *d += g);
                });
            }
            Op::Relu(x) => {
                let y = out.data();
                acc(*x, &mut |dx| {
                    for ((d, g), y) in dx.iter_mut().zip(g).zip(y) {
                        if *y > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = out.data();
                acc(*x, &mut |dx| {
                    for ((d, g), y) in dx.iter_mut().zip(g).zip(y) {
                        *d += g * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                acc(*x, &mut |dx| {
                    for ((d, g), y) in dx.iter_mut().zip(g).zip(y) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            Op::Softmax(x) => {
                let n = out.cols();
                let y = out.data();
                acc(*x, &mut |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (g - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let n = out.cols();
                let y = out.data();
                acc(*x, &mut |dx| {
                    for (((dr, gr), yr), inv) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)).zip(inv_std) {
                        let mean_g = gr.iter().sum::<f64>() / n as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += inv * (g - mean_g - y * mean_gy);
                        }
                    }
                });
            }
            Op::MeanRows(x) => {
                let m = val(*x).rows();
                let n = out.cols();
                acc(*x, &mut |dx| {
                    for chunk in dx.chunks_mut(n.max(1)) {
                        chunk.iter_mut().zip(g).for_each(|(d, g)| *d += g / m as f64);
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mse(a, b) | Op::SquaredError(a, b) => {
                let scale = match node.op {
                    Op::Mse(..) => 2.0 * g[0] / val(*a).numel() as f64,
                    _ => 2.0 * g[0],
                };
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(va).zip(vb) {
                        *d += scale * (x - y);
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, x), y) in db.iter_mut().zip(va).zip(vb) {
                        *d -= scale * (x - y);
                    }
                });
            }
            Op::CrossEntropy { logits, label } => {
                let mut p = val(*logits).data().to_vec();
                softmax_in_place(&mut p);
                acc(*logits, &mut |dz| {
                    for (j, (d, pj)) in dz.iter_mut().zip(&p).enumerate() {
                        let target = if j == *label { 1.0 } else { 0.0 };
                        *d += g[0] * (pj - target);
                    }
                });
            }
        }
    }
}
