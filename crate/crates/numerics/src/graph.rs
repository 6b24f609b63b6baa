//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly in creation order, which is a
//! valid topological order, so the backward pass is a single reverse sweep.
//! Parameters are read in place from the borrowed [`ParamStore`] and their
//! gradients are returned as [`Gradients`].

use std::collections::HashMap;

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{kernels, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddOuter(Var, Var),
    Affine(Var, f64),
    MulScalar(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Softmax(Var),
    LayerNorm(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    ScatterCols(Var, Vec<usize>),
    PadCols(Var),
    Sum(Var),
    MeanRows(Var),
    NegLogPick(Var, usize, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
    /// Per-row inverse standard deviations for layer norm.
    aux: Vec<f64>,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
            aux: Vec::new(),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumericsError::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(Op::Transpose(a), value, rg)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.rows != 1 || sr.cols != sa.cols {
            return Err(NumericsError::ShapeMismatch { op, lhs: sa, rhs: sr });
        }
        Ok(())
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        let n = r.len();
        for chunk in value.data_mut().chunks_mut(n) {
            chunk.iter_mut().zip(&r).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Op::AddRow(a, row), value, rg))
    }

    /// `a * row` elementwise, broadcasting a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        let n = r.len();
        for chunk in value.data_mut().chunks_mut(n) {
            chunk.iter_mut().zip(&r).for_each(|(x, y)| *x *= y);
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Op::MulRow(a, row), value, rg))
    }

    /// `out[i][j] = col[i] + row[j]` for an `m x 1` column and `1 x n` row.
    pub fn add_outer(&mut self, col: Var, row: Var) -> Result<Var> {
        let (sc, sr) = (self.shape(col), self.shape(row));
        if sc.cols != 1 || sr.rows != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "add_outer",
                lhs: sc,
                rhs: sr,
            });
        }
        let (c, r) = (self.value(col).data(), self.value(row).data());
        let data = c.iter().flat_map(|&x| r.iter().map(move |&y| x + y)).collect();
        let value = Tensor::from_vec(sc.rows, sr.cols, data)?;
        let rg = self.rg(&[col, row]);
        Ok(self.push(Op::AddOuter(col, row), value, rg))
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let value = self.value(a).map(|x| alpha * x + beta);
        let rg = self.rg(&[a]);
        self.push(Op::Affine(a, alpha), value, rg)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss != Shape::new(1, 1) {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_scalar",
                lhs: self.shape(a),
                rhs: ss,
            });
        }
        let k = self.value(s).data()[0];
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(&[a, s]);
        Ok(self.push(Op::MulScalar(a, s), value, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(Op::Tanh(a), value, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(Op::Sigmoid(a), value, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(Op::Relu(a), value, rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(&[a]);
        self.push(Op::LeakyRelu(a, slope), value, rg)
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        let rg = self.rg(&[a]);
        self.push(Op::Elu(a), value, rg)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        let n = t.cols();
        for row in value.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(Op::Softmax(a), value, rg)
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries get exactly zero probability. Every row needs at least one
    /// unmasked entry.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(NumericsError::InvalidArgument(format!(
                "mask of length {} for tensor of shape {}",
                mask.len(),
                t.shape()
            )));
        }
        let n = t.cols();
        let mut value = t.clone();
        for (row, m) in value.data_mut().chunks_mut(n).zip(mask.chunks(n)) {
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::InvalidArgument(
                    "masked softmax row has no unmasked entry".into(),
                ));
            }
            let mut total = 0.0;
            for (x, &keep) in row.iter_mut().zip(m) {
                *x = if keep { (*x - max).exp() } else { 0.0 };
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        let rg = self.rg(&[a]);
        // Masked entries are exact zeros, so the plain softmax backward applies.
        Ok(self.push(Op::Softmax(a), value, rg))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut value = t.clone();
        let mut inv_std = Vec::with_capacity(t.rows());
        for row in value.data_mut().chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        let rg = self.rg(&[a]);
        let v = self.push(Op::LayerNorm(a), value, rg);
        self.nodes[v.0].aux = inv_std;
        v
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::InvalidArgument("concat of nothing".into()))?;
        let rows = self.shape(*first).rows;
        for &p in parts {
            if self.shape(p).rows != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(*first),
                    rhs: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::InvalidArgument("concat of nothing".into()))?;
        let cols = self.shape(*first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).cols != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(*first),
                    rhs: self.shape(p),
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += self.shape(p).rows;
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(NumericsError::InvalidArgument(format!(
                "column slice {start}..{end} of shape {}",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let value = Tensor::from_vec(t.rows(), end - start, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SliceCols(a, start), value, rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.rows() {
            return Err(NumericsError::InvalidArgument(format!(
                "row slice {start}..{end} of shape {}",
                t.shape()
            )));
        }
        let c = t.cols();
        let value = Tensor::from_vec(end - start, c, t.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SliceRows(a, start), value, rg))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice_rows(a, r, r + 1)
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(NumericsError::InvalidArgument(format!(
                "row index {bad} out of range for table of shape {}",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::from_vec(ids.len(), t.cols(), data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(Op::Gather(table, ids.to_vec()), value, rg))
    }

    /// `out[r][ids[j]] += a[r][j]` into `size` columns.
    pub fn scatter_cols(&mut self, a: Var, ids: &[usize], size: usize) -> Result<Var> {
        let t = self.value(a);
        if ids.len() != t.cols() {
            return Err(NumericsError::InvalidArgument(format!(
                "{} scatter indices for {} columns",
                ids.len(),
                t.cols()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= size) {
            return Err(NumericsError::InvalidArgument(format!(
                "scatter index {bad} out of range for size {size}"
            )));
        }
        let mut value = Tensor::zeros(t.rows(), size);
        for r in 0..t.rows() {
            for (j, &id) in ids.iter().enumerate() {
                let v = value.get(r, id) + t.get(r, j);
                value.set(r, id, v);
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::ScatterCols(a, ids.to_vec()), value, rg))
    }

    /// Extend with zero columns up to `size`.
    pub fn pad_cols(&mut self, a: Var, size: usize) -> Result<Var> {
        let t = self.value(a);
        if size < t.cols() {
            return Err(NumericsError::InvalidArgument(format!(
                "cannot pad shape {} to {size} columns",
                t.shape()
            )));
        }
        let mut value = Tensor::zeros(t.rows(), size);
        for r in 0..t.rows() {
            value.data_mut()[r * size..r * size + t.cols()].copy_from_slice(t.row_slice(r));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::PadCols(a), value, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), value, rg)
    }

    /// Mean over rows: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(NumericsError::InvalidArgument("mean over zero rows".into()));
        }
        let mut data = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            data.iter_mut().zip(t.row_slice(r)).for_each(|(d, x)| *d += x);
        }
        let m = t.rows() as f64;
        data.iter_mut().for_each(|d| *d /= m);
        let rg = self.rg(&[a]);
        Ok(self.push(Op::MeanRows(a), Tensor::row(data), rg))
    }

    /// `-ln(max(a[0][index], floor))` for a `1 x n` probability row.
    pub fn neg_log_pick(&mut self, a: Var, index: usize, floor: f64) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != 1 || index >= t.cols() {
            return Err(NumericsError::InvalidArgument(format!(
                "pick index {index} from shape {}",
                t.shape()
            )));
        }
        let value = Tensor::scalar(-t.data()[index].max(floor).ln());
        let rg = self.rg(&[a]);
        Ok(self.push(Op::NegLogPick(a, index, floor), value, rg))
    }

    /// Inverted dropout: zero each entry with probability `p`, scale the rest
    /// by `1 / (1 - p)`. The mask is a constant.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(NumericsError::InvalidArgument(format!("dropout rate {p}")));
        }
        let s = self.shape(a);
        let keep = 1.0 / (1.0 - p);
        let mask = (0..s.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::from_vec(s.rows, s.cols, mask)?);
        self.mul(a, mask)
    }

    /// Reverse sweep from a `1 x 1` loss. Parameters the loss does not reach
    /// get no entry (read as zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != Shape::new(1, 1) {
            return Err(NumericsError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {shape}"
            )));
        }
        let mut out = Gradients::zeros_like(self.store);
        if !self.requires_grad(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, i, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) {
        let y = || self.value(Var(idx));
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(*id, g.clone()),
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b);
                    kernels::matmul_nt_acc(g, bv, self.slot(grads, *a));
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a);
                    kernels::matmul_tn_acc(av, g, self.slot(grads, *b));
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, |d, _| d.add_assign(&g.transpose())),
            Op::Add(a, b) => {
                self.acc(grads, *a, |d, _| d.add_assign(g));
                self.acc(grads, *b, |d, _| d.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d, _| d.add_assign(g));
                self.acc(grads, *b, |d, _| zip_acc(d, g, |gi| -gi));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |d, _| zip2_acc(d, g, bv, |gi, bi| gi * bi));
                self.acc(grads, *b, |d, _| zip2_acc(d, g, av, |gi, ai| gi * ai));
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, |d, _| d.add_assign(g));
                self.acc(grads, *row, |d, _| sum_rows_acc(d, g));
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                let n = rv.cols();
                self.acc(grads, *a, |d, _| {
                    for (drow, grow) in d.data_mut().chunks_mut(n).zip(g.data().chunks(n)) {
                        for ((dx, gx), r) in drow.iter_mut().zip(grow).zip(rv.data()) {
                            *dx += gx * r;
                        }
                    }
                });
                self.acc(grads, *row, |d, _| {
                    for (grow, arow) in g.data().chunks(n).zip(av.data().chunks(n)) {
                        for ((dx, gx), ax) in d.data_mut().iter_mut().zip(grow).zip(arow) {
                            *dx += gx * ax;
                        }
                    }
                });
            }
            Op::AddOuter(col, row) => {
                let n = g.cols();
                self.acc(grads, *col, |d, _| {
                    for (dx, grow) in d.data_mut().iter_mut().zip(g.data().chunks(n)) {
                        *dx += grow.iter().sum::<f64>();
                    }
                });
                self.acc(grads, *row, |d, _| sum_rows_acc(d, g));
            }
            Op::Affine(a, alpha) => self.acc(grads, *a, |d, _| zip_acc(d, g, |gi| alpha * gi)),
            Op::MulScalar(a, s) => {
                let k = self.value(*s).data()[0];
                let av = self.value(*a);
                self.acc(grads, *a, |d, _| zip_acc(d, g, |gi| gi * k));
                let dot: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                self.acc(grads, *s, |d, _| d.data_mut()[0] += dot);
            }
            Op::Tanh(a) => {
                let yv = y();
                self.acc(grads, *a, |d, _| zip2_acc(d, g, yv, |gi, yi| gi * (1.0 - yi * yi)));
            }
            Op::Sigmoid(a) => {
                let yv = y();
                self.acc(grads, *a, |d, _| zip2_acc(d, g, yv, |gi, yi| gi * yi * (1.0 - yi)));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, |d, _| {
                    zip2_acc(d, g, av, |gi, xi| if xi > 0.0 { gi } else { 0.0 })
                });
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                self.acc(grads, *a, |d, _| {
                    zip2_acc(d, g, av, |gi, xi| if xi > 0.0 { gi } else { slope * gi })
                });
            }
            Op::Elu(a) => {
                let (av, yv) = (self.value(*a), y());
                self.acc(grads, *a, |d, _| {
                    for ((dx, &gi), (&xi, &yi)) in d
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(av.data().iter().zip(yv.data()))
                    {
                        *dx += if xi > 0.0 { gi } else { gi * (yi + 1.0) };
                    }
                });
            }
            Op::Softmax(a) => {
                let yv = y();
                let n = yv.cols();
                self.acc(grads, *a, |d, _| {
                    for ((drow, grow), yrow) in d
                        .data_mut()
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .zip(yv.data().chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((dx, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dx += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm(a) => {
                let yv = y();
                let n = yv.cols();
                let inv_std = &node.aux;
                self.acc(grads, *a, |d, _| {
                    for (r, ((drow, grow), yrow)) in d
                        .data_mut()
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .zip(yv.data().chunks(n))
                        .enumerate()
                    {
                        let mean_g = grow.iter().sum::<f64>() / n as f64;
                        let mean_gy =
                            grow.iter().zip(yrow).map(|(x, y)| x * y).sum::<f64>() / n as f64;
                        for ((dx, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dx += inv_std[r] * (gi - mean_g - yi * mean_gy);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).cols;
                    self.acc(grads, p, |d, _| {
                        let c = d.cols();
                        for r in 0..d.rows() {
                            let src = &g.row_slice(r)[offset..offset + w];
                            d.data_mut()[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for &p in parts {
                    let h = self.shape(p).rows;
                    self.acc(grads, p, |d, _| {
                        let src = &g.data()[offset * c..(offset + h) * c];
                        d.data_mut().iter_mut().zip(src).for_each(|(x, y)| *x += y);
                    });
                    offset += h;
                }
            }
            Op::SliceCols(a, start) => {
                let w = g.cols();
                self.acc(grads, *a, |d, _| {
                    let c = d.cols();
                    for r in 0..d.rows() {
                        d.data_mut()[r * c + start..r * c + start + w]
                            .iter_mut()
                            .zip(g.row_slice(r))
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = g.cols();
                self.acc(grads, *a, |d, _| {
                    d.data_mut()[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(x, y)| *x += y);
                });
            }
            Op::Gather(table, ids) => {
                let c = g.cols();
                self.acc(grads, *table, |d, _| {
                    for (j, &i) in ids.iter().enumerate() {
                        d.data_mut()[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(g.row_slice(j))
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::ScatterCols(a, ids) => {
                self.acc(grads, *a, |d, _| {
                    for r in 0..d.rows() {
                        for (j, &id) in ids.iter().enumerate() {
                            let v = d.get(r, j) + g.get(r, id);
                            d.set(r, j, v);
                        }
                    }
                });
            }
            Op::PadCols(a) => {
                self.acc(grads, *a, |d, _| {
                    let c = d.cols();
                    for r in 0..d.rows() {
                        d.data_mut()[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g.row_slice(r)[..c])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Sum(a) => {
                let k = g.data()[0];
                self.acc(grads, *a, |d, _| d.data_mut().iter_mut().for_each(|x| *x += k));
            }
            Op::MeanRows(a) => {
                self.acc(grads, *a, |d, _| {
                    let m = d.rows() as f64;
                    let c = d.cols();
                    for row in d.data_mut().chunks_mut(c) {
                        row.iter_mut().zip(g.data()).for_each(|(x, y)| *x += y / m);
                    }
                });
            }
            Op::NegLogPick(a, index, floor) => {
                let p = self.value(*a).data()[*index];
                if p > *floor {
                    let k = g.data()[0];
                    self.acc(grads, *a, |d, _| d.data_mut()[*index] -= k / p);
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let s = self.shape(v);
        grads[v.0].get_or_insert_with(|| Tensor::zeros(s.rows, s.cols))
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor, Shape)) {
        if !self.requires_grad(v) {
            return;
        }
        let s = self.shape(v);
        f(self.slot(grads, v), s);
    }
}

fn zip_acc(d: &mut Tensor, g: &Tensor, f: impl Fn(f64) -> f64) {
    d.data_mut().iter_mut().zip(g.data()).for_each(|(x, &gi)| *x += f(gi));
}

fn zip2_acc(d: &mut Tensor, g: &Tensor, o: &Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((x, &gi), &oi) in d.data_mut().iter_mut().zip(g.data()).zip(o.data()) {
        *x += f(gi, oi);
    }
}

fn sum_rows_acc(d: &mut Tensor, g: &Tensor) {
    let n = d.cols();
    for grow in g.data().chunks(n) {
        d.data_mut().iter_mut().zip(grow).for_each(|(x, y)| *x += y);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
