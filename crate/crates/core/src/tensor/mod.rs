//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Exactly the operations the models need: matmul, elementwise arithmetic,
//! softmax/log-softmax, layer norm, relu, row gather (embedding lookup),
//! concat/slice and reductions. A [`Tape`] records a fixed topological graph
//! during the forward pass; [`Tape::backward`] walks it once in reverse.
//! Gradients accumulate across repeated backward calls; callers start a new
//! tape (or fresh [`GradStore`]) to zero them.
//!
//! Tapes are single-threaded. Parallel training runs one tape per example
//! and sums the extracted parameter gradients in input order, which keeps
//! results independent of thread count.

mod adam;
pub mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::{load_params, save_params, CHECKPOINT_MAGIC};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Dense row-major matrix of `f64`. Scalars are `[1, 1]`, row vectors `[1, n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Array { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Array { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(values: &[f64]) -> Self {
        Array { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Array) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn add_assign(&mut self, other: &Array) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self @ other`.
    pub fn matmul(&self, other: &Array) -> Array {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Array::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn transposed(&self) -> Array {
        let mut out = Array::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Identifier of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

/// Identifier of a named parameter in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push((name.to_string(), value));
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.entries[id.0].1
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.data.len()).sum()
    }
}

/// Per-parameter gradient accumulator, aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct GradStore {
    grads: Vec<Option<Array>>,
}

impl GradStore {
    pub fn new(params: &ParamSet) -> Self {
        GradStore { grads: vec![None; params.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Array) {
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(grad),
            slot => *slot = Some(grad.clone()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn add_store(&mut self, other: &GradStore) {
        for (slot, og) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(og) = og {
                match slot {
                    Some(g) => g.add_assign(og),
                    s => *s = Some(og.clone()),
                }
            }
        }
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(TensorId, TensorId),
    /// Elementwise add; rhs may be a `[1, c]` row broadcast over lhs rows.
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    AddConst(TensorId),
    MulConst(TensorId, Array),
    Relu(TensorId),
    Abs(TensorId),
    Exp(TensorId),
    Ln(TensorId),
    Transpose(TensorId),
    SoftmaxRows(TensorId),
    LogSoftmaxRows(TensorId),
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        // cached per-row (mean, inv_std) from the forward pass
        stats: Vec<(f64, f64)>,
    },
    ConcatCols(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    SliceCols(TensorId, usize, usize),
    GatherRows(TensorId, Vec<usize>),
    MeanPoolRows(TensorId),
    Sum(TensorId),
    Mean(TensorId),
}

struct Node {
    op: Op,
    value: Array,
    grad: Option<Array>,
}

/// Records the computation graph of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Array) -> TensorId {
        self.nodes.push(Node { op, value, grad: None });
        TensorId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: TensorId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Array> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn constant(&mut self, value: Array) -> TensorId {
        self.push(Op::Constant, value)
    }

    /// Insert a parameter leaf; its gradient is later collected by
    /// [`Tape::extract_param_grads`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> TensorId {
        let value = params.value(id).clone();
        self.push(Op::Param(id), value)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let value = av.matmul(bv);
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = if av.same_shape(bv) {
            let mut out = av.clone();
            out.add_assign(bv);
            out
        } else if bv.rows == 1 && bv.cols == av.cols {
            let mut out = av.clone();
            for r in 0..out.rows {
                for c in 0..out.cols {
                    out.data[r * out.cols + c] += bv.data[c];
                }
            }
            out
        } else {
            return Err(Error::Shape(format!(
                "add {}x{} and {}x{}",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        };
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!(
                "sub {}x{} and {}x{}",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let mut out = av.clone();
        for (o, b) in out.data.iter_mut().zip(&bv.data) {
            *o -= b;
        }
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!(
                "mul {}x{} and {}x{}",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let mut out = av.clone();
        for (o, b) in out.data.iter_mut().zip(&bv.data) {
            *o *= b;
        }
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            *v *= factor;
        }
        self.push(Op::Scale(a, factor), out)
    }

    pub fn add_scalar(&mut self, a: TensorId, term: f64) -> TensorId {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            *v += term;
        }
        self.push(Op::AddScalar(a), out)
    }

    pub fn add_const(&mut self, a: TensorId, c: Array) -> Result<TensorId> {
        if !self.value(a).same_shape(&c) {
            return Err(Error::Shape("add_const shape mismatch".into()));
        }
        let mut out = self.value(a).clone();
        out.add_assign(&c);
        Ok(self.push(Op::AddConst(a), out))
    }

    pub fn mul_const(&mut self, a: TensorId, c: Array) -> Result<TensorId> {
        if !self.value(a).same_shape(&c) {
            return Err(Error::Shape("mul_const shape mismatch".into()));
        }
        let mut out = self.value(a).clone();
        for (o, m) in out.data.iter_mut().zip(&c.data) {
            *o *= m;
        }
        Ok(self.push(Op::MulConst(a, c), out))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(Op::Relu(a), out)
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            *v = v.abs();
        }
        self.push(Op::Abs(a), out)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            *v = v.exp();
        }
        self.push(Op::Exp(a), out)
    }

    /// Elementwise natural log; rejects nonpositive inputs.
    pub fn ln(&mut self, a: TensorId) -> Result<TensorId> {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            if *v <= 0.0 {
                return Err(Error::Domain(format!("ln of nonpositive value {v}")));
            }
            *v = v.ln();
        }
        Ok(self.push(Op::Ln(a), out))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let out = self.value(a).transposed();
        self.push(Op::Transpose(a), out)
    }

    /// Row-wise softmax, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows {
            softmax_in_place(&mut out.data[r * out.cols..(r + 1) * out.cols]);
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn log_softmax_rows(&mut self, a: TensorId) -> TensorId {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows {
            let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmaxRows(a), out)
    }

    /// Per-row layer normalization followed by an affine transform with
    /// `[1, c]` gain and bias.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> Result<TensorId> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let gv = self.value(gain);
        let bv = self.value(bias);
        if gv.rows != 1 || gv.cols != cols || bv.rows != 1 || bv.cols != cols {
            return Err(Error::Shape("layer_norm gain/bias must be [1, cols]".into()));
        }
        let mut out = Array::zeros(rows, cols);
        let mut stats = Vec::with_capacity(rows);
        let xv = self.value(x).clone();
        let gv = self.value(gain).clone();
        let bv = self.value(bias).clone();
        for r in 0..rows {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            stats.push((mean, inv_std));
            for c in 0..cols {
                let norm = (row[c] - mean) * inv_std;
                out.data[r * cols + c] = norm * gv.data[c] + bv.data[c];
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, stats }, out))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        }
        let rows = self.value(parts[0]).rows;
        if parts.iter().any(|p| self.value(*p).rows != rows) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Array::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            for r in 0..rows {
                let dst = &mut out.data[r * total + off..r * total + off + pv.cols];
                dst.copy_from_slice(pv.row_slice(r));
            }
            off += pv.cols;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of zero tensors".into()));
        }
        let cols = self.value(parts[0]).cols;
        if parts.iter().any(|p| self.value(*p).cols != cols) {
            return Err(Error::Shape("concat_rows col mismatch".into()));
        }
        let rows: usize = parts.iter().map(|p| self.value(*p).rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&self.value(*p).data);
        }
        let out = Array { rows, cols, data };
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let av = self.value(a);
        if start >= end || end > av.cols {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{end} of {} cols",
                av.cols
            )));
        }
        let width = end - start;
        let mut out = Array::zeros(av.rows, width);
        for r in 0..av.rows {
            out.data[r * width..(r + 1) * width]
                .copy_from_slice(&av.data[r * av.cols + start..r * av.cols + end]);
        }
        Ok(self.push(Op::SliceCols(a, start, end), out))
    }

    /// Embedding lookup: select rows of `a` by index, with repetition.
    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let av = self.value(a);
        if indices.iter().any(|&i| i >= av.rows) {
            return Err(Error::Shape("gather_rows index out of range".into()));
        }
        let mut out = Array::zeros(indices.len(), av.cols);
        for (r, &i) in indices.iter().enumerate() {
            out.data[r * av.cols..(r + 1) * av.cols].copy_from_slice(av.row_slice(i));
        }
        Ok(self.push(Op::GatherRows(a, indices.to_vec()), out))
    }

    pub fn mean_pool_rows(&mut self, a: TensorId) -> TensorId {
        let av = self.value(a);
        let mut out = Array::zeros(1, av.cols);
        for r in 0..av.rows {
            for c in 0..av.cols {
                out.data[c] += av.data[r * av.cols + c];
            }
        }
        for v in out.data.iter_mut() {
            *v /= av.rows as f64;
        }
        self.push(Op::MeanPoolRows(a), out)
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Array::scalar(s))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let av = self.value(a);
        let s: f64 = av.data.iter().sum::<f64>() / av.data.len() as f64;
        self.push(Op::Mean(a), Array::scalar(s))
    }

    /// Cross entropy between row-wise target distributions and logits,
    /// averaged over rows: `-(1/n) sum target . log_softmax(logits)`.
    pub fn cross_entropy_rows(&mut self, logits: TensorId, targets: Array) -> Result<TensorId> {
        if !self.value(logits).same_shape(&targets) {
            return Err(Error::Shape("cross_entropy target shape mismatch".into()));
        }
        let rows = targets.rows;
        let logp = self.log_softmax_rows(logits);
        let weighted = self.mul_const(logp, targets)?;
        let total = self.sum(weighted);
        Ok(self.scale(total, -1.0 / rows as f64))
    }

    /// Backpropagate from a scalar node, accumulating into existing grads.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        {
            let lv = self.value(loss);
            if lv.rows != 1 || lv.cols != 1 {
                return Err(Error::Shape("backward requires a scalar loss".into()));
            }
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) {
        let add_to = |grads: &mut [Option<Array>], id: TensorId, inc: Array| match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&inc),
            slot => *slot = Some(inc),
        };
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                add_to(grads, *a, g.matmul(&bv.transposed()));
                add_to(grads, *b, av.transposed().matmul(g));
            }
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                let bv = &self.nodes[b.0].value;
                if bv.same_shape(g) {
                    add_to(grads, *b, g.clone());
                } else {
                    // rhs was a broadcast row: sum over rows
                    let mut gb = Array::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gb.data[c] += g.data[r * g.cols + c];
                        }
                    }
                    add_to(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                let mut neg = g.clone();
                for v in neg.data.iter_mut() {
                    *v = -*v;
                }
                add_to(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let mut ga = g.clone();
                for (x, y) in ga.data.iter_mut().zip(&bv.data) {
                    *x *= y;
                }
                let mut gb = g.clone();
                for (x, y) in gb.data.iter_mut().zip(&av.data) {
                    *x *= y;
                }
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::Scale(a, factor) => {
                let mut ga = g.clone();
                for v in ga.data.iter_mut() {
                    *v *= factor;
                }
                add_to(grads, *a, ga);
            }
            Op::AddScalar(a) | Op::AddConst(a) => add_to(grads, *a, g.clone()),
            Op::MulConst(a, c) => {
                let mut ga = g.clone();
                for (x, y) in ga.data.iter_mut().zip(&c.data) {
                    *x *= y;
                }
                add_to(grads, *a, ga);
            }
            Op::Relu(a) => {
                let av = &self.nodes[a.0].value;
                let mut ga = g.clone();
                for (x, v) in ga.data.iter_mut().zip(&av.data) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::Exp(a) => {
                let out = &self.nodes[i].value;
                let mut ga = g.clone();
                for (x, o) in ga.data.iter_mut().zip(&out.data) {
                    *x *= o;
                }
                add_to(grads, *a, ga);
            }
            Op::Ln(a) => {
                let av = &self.nodes[a.0].value;
                let mut ga = g.clone();
                for (x, v) in ga.data.iter_mut().zip(&av.data) {
                    *x /= v;
                }
                add_to(grads, *a, ga);
            }
            Op::Abs(a) => {
                let av = &self.nodes[a.0].value;
                let mut ga = g.clone();
                for (x, v) in ga.data.iter_mut().zip(&av.data) {
                    *x *= if *v > 0.0 {
                        1.0
                    } else if *v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                add_to(grads, *a, ga);
            }
            Op::Transpose(a) => add_to(grads, *a, g.transposed()),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Array::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        ga.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value; // log-probabilities
                let mut ga = Array::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let gsum: f64 = gr.iter().sum();
                    for c in 0..y.cols {
                        ga.data[r * y.cols + c] = gr[c] - yr[c].exp() * gsum;
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gain.0].value;
                let (rows, cols) = (xv.rows, xv.cols);
                let mut gx = Array::zeros(rows, cols);
                let mut ggain = Array::zeros(1, cols);
                let mut gbias = Array::zeros(1, cols);
                for r in 0..rows {
                    let (mean, inv_std) = stats[r];
                    let xr = xv.row_slice(r);
                    let gr = g.row_slice(r);
                    // normalized row and upstream-through-affine grad
                    let norm: Vec<f64> = xr.iter().map(|v| (v - mean) * inv_std).collect();
                    let dy: Vec<f64> = gr.iter().zip(&gv.data).map(|(a, b)| a * b).collect();
                    for c in 0..cols {
                        ggain.data[c] += gr[c] * norm[c];
                        gbias.data[c] += gr[c];
                    }
                    let dy_mean: f64 = dy.iter().sum::<f64>() / cols as f64;
                    let dyn_mean: f64 =
                        dy.iter().zip(&norm).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        gx.data[r * cols + c] =
                            inv_std * (dy[c] - dy_mean - norm[c] * dyn_mean);
                    }
                }
                add_to(grads, *x, gx);
                add_to(grads, *gain, ggain);
                add_to(grads, *bias, gbias);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let pv = &self.nodes[p.0].value;
                    let mut gp = Array::zeros(pv.rows, pv.cols);
                    for r in 0..pv.rows {
                        gp.data[r * pv.cols..(r + 1) * pv.cols]
                            .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + pv.cols]);
                    }
                    add_to(grads, *p, gp);
                    off += pv.cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let pv = &self.nodes[p.0].value;
                    let mut gp = Array::zeros(pv.rows, pv.cols);
                    gp.data
                        .copy_from_slice(&g.data[off * g.cols..(off + pv.rows) * g.cols]);
                    add_to(grads, *p, gp);
                    off += pv.rows;
                }
            }
            Op::SliceCols(a, start, end) => {
                let av = &self.nodes[a.0].value;
                let width = end - start;
                let mut ga = Array::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    ga.data[r * av.cols + start..r * av.cols + end]
                        .copy_from_slice(&g.data[r * width..(r + 1) * width]);
                }
                add_to(grads, *a, ga);
            }
            Op::GatherRows(a, indices) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Array::zeros(av.rows, av.cols);
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..av.cols {
                        ga.data[i * av.cols + c] += g.data[r * av.cols + c];
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::MeanPoolRows(a) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Array::zeros(av.rows, av.cols);
                let inv = 1.0 / av.rows as f64;
                for r in 0..av.rows {
                    for c in 0..av.cols {
                        ga.data[r * av.cols + c] = g.data[c] * inv;
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::Sum(a) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Array::zeros(av.rows, av.cols);
                for v in ga.data.iter_mut() {
                    *v = g.item();
                }
                add_to(grads, *a, ga);
            }
            Op::Mean(a) => {
                let av = &self.nodes[a.0].value;
                let inv = g.item() / av.data.len() as f64;
                let mut ga = Array::zeros(av.rows, av.cols);
                for v in ga.data.iter_mut() {
                    *v = inv;
                }
                add_to(grads, *a, ga);
            }
        }
    }

    /// Collect gradients of all parameter leaves into `store`.
    pub fn extract_param_grads(&self, store: &mut GradStore) {
        for node in &self.nodes {
            if let (Op::Param(pid), Some(g)) = (&node.op, &node.grad) {
                store.accumulate(*pid, g);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
