//! Reverse-mode automatic differentiation on a flat tape, 64-bit floats
//! throughout.
//!
//! The primitive set is deliberately small: matmul, add, multiply, relu,
//! sigmoid, row-wise softmax / log-softmax, embedding gather, mean, sum,
//! concat, cross-entropy, and two constant folds (scale, add-const). That is
//! the closure needed by the message-passing models and every loss in this
//! crate. Values are computed eagerly as operations are recorded; a backward
//! pass walks the tape once in reverse and accumulates adjoints additively,
//! so a tensor used k times receives exactly k local contributions.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

/// Extract values in logical row-major order. `dot` involving transposed
/// views may hand back an array whose memory order is reversed, so the raw
/// buffer cannot be trusted without this check.
fn matrix_values(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid operand shape {shape:?}")]
    BadShape { op: &'static str, shape: Vec<usize> },
    #[error("{op}: index {index} out of range ({limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("gradient for {name:?} has {got} values, parameter has {want}")]
    GradientSize { name: String, got: usize, want: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Dense row-major tensor. Scalars use an empty shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Tensor { shape, data, requires_grad: false }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Rows/columns view of a rank-2 tensor; rank-1 counts as a single row.
    fn as_matrix(&self) -> Option<(usize, usize)> {
        match self.shape.len() {
            1 => Some((1, self.shape[0])),
            2 => Some((self.shape[0], self.shape[1])),
            _ => None,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Relu(ValueId),
    Sigmoid(ValueId),
    Softmax(ValueId),
    LogSoftmax(ValueId),
    Embedding { table: ValueId, indices: Vec<usize> },
    Mean(ValueId),
    Sum(ValueId),
    Concat(Vec<ValueId>),
    CrossEntropy { logits: ValueId, targets: Vec<usize> },
    Scale(ValueId, f64),
    AddConst(ValueId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Records operations in topological order as they execute. One backward pass
/// visits each node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradStore {
    pub fn get(&self, id: ValueId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, t: Tensor) -> ValueId {
        let needs_grad = t.requires_grad;
        self.push(Op::Input, t, needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> ValueId {
        self.push(Op::Input, Tensor { requires_grad: false, ..t }, false)
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> ValueId {
        self.nodes.push(Node { op, value, needs_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check_finite(t: &Tensor, op: &'static str) -> Result<(), AutodiffError> {
        if t.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AutodiffError::NonFinite(op))
        }
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (lhs, rhs) = (ta.shape.clone(), tb.shape.clone());
        if lhs.len() != 2 || rhs.len() != 2 || lhs[1] != rhs[0] {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs, rhs });
        }
        let (m, k, n) = (lhs[0], lhs[1], rhs[1]);
        let va = ArrayView2::from_shape((m, k), &ta.data).expect("checked");
        let vb = ArrayView2::from_shape((k, n), &tb.data).expect("checked");
        let out = va.dot(&vb);
        let t = Tensor::new(vec![m, n], matrix_values(out));
        Self::check_finite(&t, "matmul")?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), t, ng))
    }

    /// Elementwise add. `b` may share `a`'s shape, be a scalar, or match
    /// `a`'s trailing dimensions (broadcast over the leading one).
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.broadcast_binary("add", a, b, |x, y| x + y)
            .map(|(t, ng)| self.push(Op::Add(a, b), t, ng))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.broadcast_binary("multiply", a, b, |x, y| x * y)
            .map(|(t, ng)| self.push(Op::Mul(a, b), t, ng))
    }

    fn broadcast_binary(
        &self,
        op: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = match broadcast_kind(&ta.shape, &tb.shape) {
            Some(BroadcastKind::Equal) => ta
                .data
                .iter()
                .zip(&tb.data)
                .map(|(&x, &y)| f(x, y))
                .collect(),
            Some(BroadcastKind::Scalar) => {
                let y = tb.data[0];
                ta.data.iter().map(|&x| f(x, y)).collect()
            }
            Some(BroadcastKind::Row) => {
                let row = tb.numel();
                ta.data
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, tb.data[i % row]))
                    .collect()
            }
            None => {
                return Err(AutodiffError::ShapeMismatch {
                    op,
                    lhs: ta.shape.clone(),
                    rhs: tb.shape.clone(),
                })
            }
        };
        let t = Tensor::new(ta.shape.clone(), data);
        Self::check_finite(&t, op)?;
        Ok((t, self.needs(a) || self.needs(b)))
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let t = Tensor::new(
            self.value(a).shape.clone(),
            self.value(a).data.iter().map(|&x| x.max(0.0)).collect(),
        );
        Self::check_finite(&t, "relu")?;
        let ng = self.needs(a);
        Ok(self.push(Op::Relu(a), t, ng))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let t = Tensor::new(
            self.value(a).shape.clone(),
            self.value(a).data.iter().map(|&x| sigmoid(x)).collect(),
        );
        Self::check_finite(&t, "sigmoid")?;
        let ng = self.needs(a);
        Ok(self.push(Op::Sigmoid(a), t, ng))
    }

    pub fn softmax(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let ta = self.value(a);
        let (rows, cols) = ta
            .as_matrix()
            .ok_or_else(|| AutodiffError::BadShape { op: "softmax", shape: ta.shape.clone() })?;
        let mut data = ta.data.clone();
        for r in 0..rows {
            softmax_row(&mut data[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(ta.shape.clone(), data);
        Self::check_finite(&t, "softmax")?;
        let ng = self.needs(a);
        Ok(self.push(Op::Softmax(a), t, ng))
    }

    pub fn log_softmax(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let ta = self.value(a);
        let (rows, cols) = ta.as_matrix().ok_or_else(|| AutodiffError::BadShape {
            op: "log_softmax",
            shape: ta.shape.clone(),
        })?;
        let mut data = ta.data.clone();
        for r in 0..rows {
            log_softmax_row(&mut data[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(ta.shape.clone(), data);
        Self::check_finite(&t, "log_softmax")?;
        let ng = self.needs(a);
        Ok(self.push(Op::LogSoftmax(a), t, ng))
    }

    /// Gather rows of `table` ([vocab, dim]) by index: output is [len, dim].
    pub fn embedding(&mut self, table: ValueId, indices: &[usize]) -> Result<ValueId, AutodiffError> {
        let tt = self.value(table);
        if tt.shape.len() != 2 {
            return Err(AutodiffError::BadShape { op: "embedding", shape: tt.shape.clone() });
        }
        let (vocab, dim) = (tt.shape[0], tt.shape[1]);
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= vocab {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "embedding",
                    index: i,
                    limit: vocab,
                });
            }
            data.extend_from_slice(&tt.data[i * dim..(i + 1) * dim]);
        }
        let t = Tensor::new(vec![indices.len(), dim], data);
        let ng = self.needs(table);
        Ok(self.push(Op::Embedding { table, indices: indices.to_vec() }, t, ng))
    }

    pub fn mean(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let ta = self.value(a);
        if ta.numel() == 0 {
            return Err(AutodiffError::BadShape { op: "mean", shape: ta.shape.clone() });
        }
        let v = ta.data.iter().sum::<f64>() / ta.numel() as f64;
        let t = Tensor::scalar(v);
        Self::check_finite(&t, "mean")?;
        let ng = self.needs(a);
        Ok(self.push(Op::Mean(a), t, ng))
    }

    pub fn sum(&mut self, a: ValueId) -> Result<ValueId, AutodiffError> {
        let v = self.value(a).data.iter().sum::<f64>();
        let t = Tensor::scalar(v);
        Self::check_finite(&t, "sum")?;
        let ng = self.needs(a);
        Ok(self.push(Op::Sum(a), t, ng))
    }

    /// Concatenate rank-2 tensors with equal leading dimension along axis 1.
    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::BadShape { op: "concat", shape: vec![] });
        }
        let rows = self.value(parts[0]).shape.first().copied().unwrap_or(0);
        let mut cols = 0usize;
        for &p in parts {
            let s = &self.value(p).shape;
            if s.len() != 2 || s[0] != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(parts[0]).shape.clone(),
                    rhs: s.clone(),
                });
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape[1];
                data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
            }
        }
        let t = Tensor::new(vec![rows, cols], data);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec()), t, ng))
    }

    /// Mean over rows of the negative log-likelihood of each row's target
    /// class under a softmax of the logits.
    pub fn cross_entropy(&mut self, logits: ValueId, targets: &[usize]) -> Result<ValueId, AutodiffError> {
        let tl = self.value(logits);
        let (rows, cols) = tl.as_matrix().ok_or_else(|| AutodiffError::BadShape {
            op: "cross_entropy",
            shape: tl.shape.clone(),
        })?;
        if targets.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                lhs: tl.shape.clone(),
                rhs: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    limit: cols,
                });
            }
            let mut row = tl.data[r * cols..(r + 1) * cols].to_vec();
            log_softmax_row(&mut row);
            total -= row[t];
        }
        let t = Tensor::scalar(total / rows as f64);
        Self::check_finite(&t, "cross_entropy")?;
        let ng = self.needs(logits);
        Ok(self.push(Op::CrossEntropy { logits, targets: targets.to_vec() }, t, ng))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId, AutodiffError> {
        let t = Tensor::new(
            self.value(a).shape.clone(),
            self.value(a).data.iter().map(|&x| x * c).collect(),
        );
        Self::check_finite(&t, "scale")?;
        let ng = self.needs(a);
        Ok(self.push(Op::Scale(a, c), t, ng))
    }

    pub fn add_const(&mut self, a: ValueId, c: f64) -> Result<ValueId, AutodiffError> {
        let t = Tensor::new(
            self.value(a).shape.clone(),
            self.value(a).data.iter().map(|&x| x + c).collect(),
        );
        Self::check_finite(&t, "add_const")?;
        let ng = self.needs(a);
        Ok(self.push(Op::AddConst(a), t, ng))
    }

    /// Reverse pass from a scalar output. Adjoints accumulate additively, so
    /// values feeding several consumers collect one contribution per use.
    pub fn backward(&self, out: ValueId) -> Result<GradStore, AutodiffError> {
        let out_t = self.value(out);
        if !out_t.is_scalar() {
            return Err(AutodiffError::NonScalarOutput(out_t.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g_out) = grads[idx].take() else { continue };
            self.accumulate_local(idx, &g_out, &mut grads);
            grads[idx] = Some(g_out);
        }
        Ok(GradStore { grads })
    }

    fn add_into(&self, grads: &mut Vec<Option<Vec<f64>>>, id: ValueId, contrib: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; self.value(id).numel()]);
        for (s, c) in slot.iter_mut().zip(contrib) {
            *s += c;
        }
    }

    fn accumulate_local(&self, idx: usize, g_out: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                let gc = ArrayView2::from_shape((m, n), g_out).expect("shape");
                let va = ArrayView2::from_shape((m, k), &ta.data).expect("shape");
                let vb = ArrayView2::from_shape((k, n), &tb.data).expect("shape");
                if self.needs(*a) {
                    let da = gc.dot(&vb.t());
                    self.add_into(grads, *a, &matrix_values(da));
                }
                if self.needs(*b) {
                    let db = va.t().dot(&gc);
                    self.add_into(grads, *b, &matrix_values(db));
                }
            }
            Op::Add(a, b) => {
                self.add_into(grads, *a, g_out);
                if self.needs(*b) {
                    let tb = self.value(*b);
                    let contrib = reduce_for_broadcast(&self.value(*a).shape, &tb.shape, g_out, None);
                    self.add_into(grads, *b, &contrib);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let kind = broadcast_kind(&ta.shape, &tb.shape).expect("validated");
                    let contrib: Vec<f64> = g_out
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| {
                            g * match kind {
                                BroadcastKind::Equal => tb.data[i],
                                BroadcastKind::Scalar => tb.data[0],
                                BroadcastKind::Row => tb.data[i % tb.numel()],
                            }
                        })
                        .collect();
                    self.add_into(grads, *a, &contrib);
                }
                if self.needs(*b) {
                    let contrib =
                        reduce_for_broadcast(&ta.shape, &tb.shape, g_out, Some(&ta.data));
                    self.add_into(grads, *b, &contrib);
                }
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let contrib: Vec<f64> = g_out
                    .iter()
                    .zip(&ta.data)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.add_into(grads, *a, &contrib);
            }
            Op::Sigmoid(a) => {
                let s = &node.value.data;
                let contrib: Vec<f64> = g_out
                    .iter()
                    .zip(s)
                    .map(|(&g, &y)| g * y * (1.0 - y))
                    .collect();
                self.add_into(grads, *a, &contrib);
            }
            Op::Softmax(a) => {
                let s = &node.value.data;
                let (rows, cols) = node.value.as_matrix().expect("validated");
                let mut contrib = vec![0.0; s.len()];
                for r in 0..rows {
                    let range = r * cols..(r + 1) * cols;
                    let sr = &s[range.clone()];
                    let gr = &g_out[range.clone()];
                    let dot: f64 = sr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for ((c, &y), &g) in contrib[range].iter_mut().zip(sr).zip(gr) {
                        *c = y * (g - dot);
                    }
                }
                self.add_into(grads, *a, &contrib);
            }
            Op::LogSoftmax(a) => {
                let ls = &node.value.data;
                let (rows, cols) = node.value.as_matrix().expect("validated");
                let mut contrib = vec![0.0; ls.len()];
                for r in 0..rows {
                    let range = r * cols..(r + 1) * cols;
                    let lr = &ls[range.clone()];
                    let gr = &g_out[range.clone()];
                    let gsum: f64 = gr.iter().sum();
                    for ((c, &l), &g) in contrib[range].iter_mut().zip(lr).zip(gr) {
                        *c = g - l.exp() * gsum;
                    }
                }
                self.add_into(grads, *a, &contrib);
            }
            Op::Embedding { table, indices } => {
                let dim = self.value(*table).shape[1];
                let mut contrib = vec![0.0; self.value(*table).numel()];
                for (row, &i) in indices.iter().enumerate() {
                    for d in 0..dim {
                        contrib[i * dim + d] += g_out[row * dim + d];
                    }
                }
                self.add_into(grads, *table, &contrib);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                let g = g_out[0] / n;
                let contrib = vec![g; self.value(*a).numel()];
                self.add_into(grads, *a, &contrib);
            }
            Op::Sum(a) => {
                let contrib = vec![g_out[0]; self.value(*a).numel()];
                self.add_into(grads, *a, &contrib);
            }
            Op::Concat(parts) => {
                let rows = node.value.shape[0];
                let total_cols = node.value.shape[1];
                let mut offset = 0usize;
                for &p in parts {
                    let cols = self.value(p).shape[1];
                    if self.needs(p) {
                        let mut contrib = vec![0.0; rows * cols];
                        for r in 0..rows {
                            contrib[r * cols..(r + 1) * cols].copy_from_slice(
                                &g_out[r * total_cols + offset..r * total_cols + offset + cols],
                            );
                        }
                        self.add_into(grads, p, &contrib);
                    }
                    offset += cols;
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let tl = self.value(*logits);
                let (rows, cols) = tl.as_matrix().expect("validated");
                let g = g_out[0] / rows as f64;
                let mut contrib = vec![0.0; tl.numel()];
                for (r, &t) in targets.iter().enumerate() {
                    let mut row = tl.data[r * cols..(r + 1) * cols].to_vec();
                    softmax_row(&mut row);
                    for c in 0..cols {
                        let indicator = if c == t { 1.0 } else { 0.0 };
                        contrib[r * cols + c] = g * (row[c] - indicator);
                    }
                }
                self.add_into(grads, *logits, &contrib);
            }
            Op::Scale(a, c) => {
                let contrib: Vec<f64> = g_out.iter().map(|&g| g * c).collect();
                self.add_into(grads, *a, &contrib);
            }
            Op::AddConst(a) => {
                self.add_into(grads, *a, g_out);
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BroadcastKind {
    Equal,
    Scalar,
    Row,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<BroadcastKind> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        Some(BroadcastKind::Equal)
    } else if numel(b) == 1 {
        Some(BroadcastKind::Scalar)
    } else if a.len() >= 2 && numel(&a[1..]) == numel(b) {
        Some(BroadcastKind::Row)
    } else {
        None
    }
}

/// Sum an upstream gradient down to the broadcast operand's shape, optionally
/// weighting by the other operand (for multiply).
fn reduce_for_broadcast(
    a_shape: &[usize],
    b_shape: &[usize],
    g_out: &[f64],
    weight: Option<&[f64]>,
) -> Vec<f64> {
    let b_numel: usize = b_shape.iter().product();
    match broadcast_kind(a_shape, b_shape).expect("validated") {
        BroadcastKind::Equal => match weight {
            None => g_out.to_vec(),
            Some(w) => g_out.iter().zip(w).map(|(&g, &x)| g * x).collect(),
        },
        BroadcastKind::Scalar => {
            let total = match weight {
                None => g_out.iter().sum(),
                Some(w) => g_out.iter().zip(w).map(|(&g, &x)| g * x).sum(),
            };
            vec![total]
        }
        BroadcastKind::Row => {
            let mut out = vec![0.0; b_numel];
            for (i, &g) in g_out.iter().enumerate() {
                let x = weight.map_or(1.0, |w| w[i]);
                out[i % b_numel] += g * x;
            }
            out
        }
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

fn softmax_row(row: &mut [f64]) {
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

fn log_softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    for v in row.iter_mut() {
        *v -= log_sum;
    }
}

// ── Parameters and the optimizer ─────────────────────────────────────

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Param {
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameter tensors with per-parameter Adam moment accumulators and a
/// shared step count. Iteration order is the sorted name order, which keeps
/// updates and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
    step: u64,
}

/// Gradients keyed by parameter name. Missing entries mean zero gradient.
pub type Gradients = BTreeMap<String, Vec<f64>>;

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        let n = tensor.numel();
        assert!(
            self.params
                .insert(
                    name.to_string(),
                    Param { value: tensor.with_grad(), m: vec![0.0; n], v: vec![0.0; n] }
                )
                .is_none(),
            "duplicate parameter {name:?}"
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn set_values(&mut self, name: &str, data: &[f64]) {
        let p = self.params.get_mut(name).expect("unknown parameter");
        assert_eq!(p.value.numel(), data.len());
        p.value.data.copy_from_slice(data);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// One Adam step with bias correction. Parameters without a gradient
    /// entry are treated as having zero gradient: their moments still decay
    /// and they share the incremented step count.
    pub fn adam_update(&mut self, grads: &Gradients, lr: f64) -> Result<(), AutodiffError> {
        for name in grads.keys() {
            if !self.params.contains_key(name) {
                return Err(AutodiffError::Checkpoint(format!(
                    "gradient for unknown parameter {name:?}"
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - ADAM_BETA1.powf(t);
        let bias2 = 1.0 - ADAM_BETA2.powf(t);
        static ZERO: &[f64] = &[];
        for (name, p) in self.params.iter_mut() {
            let g = grads.get(name).map(|v| v.as_slice()).unwrap_or(ZERO);
            if !g.is_empty() {
                if g.len() != p.value.numel() {
                    return Err(AutodiffError::GradientSize {
                        name: name.clone(),
                        got: g.len(),
                        want: p.value.numel(),
                    });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(AutodiffError::NonFiniteGradient(name.clone()));
                }
            }
            for i in 0..p.value.numel() {
                let gi = g.get(i).copied().unwrap_or(0.0);
                p.m[i] = ADAM_BETA1 * p.m[i] + (1.0 - ADAM_BETA1) * gi;
                p.v[i] = ADAM_BETA2 * p.v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = p.m[i] / bias1;
                let v_hat = p.v[i] / bias2;
                p.value.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

// ── Gradient checking ────────────────────────────────────────────────

/// Relative error uses a floored denominator so that near-zero analytic
/// gradients are held to an absolute 1e-7 when the caller tests against the
/// usual 1e-4 relative tolerance.
const REL_ERR_FLOOR: f64 = 1e-3;

/// Compare tape gradients against central finite differences, coordinate by
/// coordinate over every input marked `requires_grad`. Returns the worst
/// relative error observed.
pub fn finite_diff_check<F>(
    build: F,
    inputs: &[Tensor],
    epsilon: f64,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId, AutodiffError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let eval = |tensors: &[Tensor]| -> Result<(f64, Vec<Option<Vec<f64>>>), AutodiffError> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &ids)?;
        if !tape.value(out).is_scalar() {
            return Err(AutodiffError::NonScalarOutput(tape.value(out).shape.clone()));
        }
        let y = tape.value(out).data[0];
        let store = tape.backward(out)?;
        let grads = ids
            .iter()
            .map(|&id| store.get(id).map(|g| g.to_vec()))
            .collect();
        Ok((y, grads))
    };

    let (_, analytic) = eval(inputs)?;
    let mut worst = 0.0f64;
    let mut perturbed: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        if !t.requires_grad {
            continue;
        }
        for ci in 0..t.numel() {
            let orig = t.data[ci];
            perturbed[ti].data[ci] = orig + epsilon;
            let (y_plus, _) = eval_value(&build, &perturbed)?;
            perturbed[ti].data[ci] = orig - epsilon;
            let (y_minus, _) = eval_value(&build, &perturbed)?;
            perturbed[ti].data[ci] = orig;
            let fd = (y_plus - y_minus) / (2.0 * epsilon);
            let g = analytic[ti].as_ref().map_or(0.0, |g| g[ci]);
            let err = (g - fd).abs() / fd.abs().max(REL_ERR_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn eval_value<F>(build: &F, tensors: &[Tensor]) -> Result<(f64, ()), AutodiffError>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId, AutodiffError>,
{
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    Ok((tape.value(out).data[0], ()))
}

// ── Checkpoint format ────────────────────────────────────────────────

const CHECKPOINT_MAGIC: &str = "REFLX1";

/// Write parameters with a metadata header. Layout: the ASCII magic line,
/// one `meta k=v ...` line, then per parameter a `param <name> <dims...>`
/// header line followed by the raw little-endian f64 payload.
pub fn save_checkpoint(
    path: &Path,
    meta: &BTreeMap<String, String>,
    params: &ParameterSet,
) -> Result<(), AutodiffError> {
    let mut out = Vec::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").expect("vec write");
    let meta_line: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "meta {}", meta_line.join(" ")).expect("vec write");
    for (name, tensor) in params.iter() {
        let dims: Vec<String> = tensor.shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "param {name} {}", dims.join(" ")).expect("vec write");
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| AutodiffError::Checkpoint(format!("{path:?}: {e}")))
}

/// Read a checkpoint back. Shape validation against a concrete model happens
/// at the model layer; this returns raw tensors keyed by name.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(BTreeMap<String, String>, BTreeMap<String, Tensor>), AutodiffError> {
    let bytes = std::fs::read(path)
        .map_err(|e| AutodiffError::Checkpoint(format!("{path:?}: {e}")))?;
    let mut cursor = 0usize;
    let read_line = |cursor: &mut usize| -> Result<String, AutodiffError> {
        let start = *cursor;
        while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
            *cursor += 1;
        }
        if *cursor >= bytes.len() {
            return Err(AutodiffError::Checkpoint("truncated header".into()));
        }
        let line = std::str::from_utf8(&bytes[start..*cursor])
            .map_err(|_| AutodiffError::Checkpoint("non-UTF8 header".into()))?
            .to_string();
        *cursor += 1;
        Ok(line)
    };
    let magic = read_line(&mut cursor)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let meta_line = read_line(&mut cursor)?;
    let mut meta = BTreeMap::new();
    let rest = meta_line
        .strip_prefix("meta")
        .ok_or_else(|| AutodiffError::Checkpoint(format!("expected meta line, got {meta_line:?}")))?;
    for pair in rest.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| AutodiffError::Checkpoint(format!("bad meta entry {pair:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let mut tensors = BTreeMap::new();
    while cursor < bytes.len() {
        let header = read_line(&mut cursor)?;
        let mut it = header.split_whitespace();
        match it.next() {
            Some("param") => {}
            other => {
                return Err(AutodiffError::Checkpoint(format!(
                    "expected param record, got {other:?}"
                )))
            }
        }
        let name = it
            .next()
            .ok_or_else(|| AutodiffError::Checkpoint("param record missing name".into()))?
            .to_string();
        let shape: Vec<usize> = it
            .map(|d| {
                d.parse()
                    .map_err(|_| AutodiffError::Checkpoint(format!("bad dim {d:?} for {name:?}")))
            })
            .collect::<Result<_, _>>()?;
        let numel: usize = shape.iter().product();
        let end = cursor + numel * 8;
        if end > bytes.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "truncated payload for {name:?}"
            )));
        }
        let mut data = Vec::with_capacity(numel);
        let mut chunk = &bytes[cursor..end];
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            chunk.read_exact(&mut buf).expect("length checked");
            data.push(f64::from_le_bytes(buf));
        }
        cursor = end;
        if tensors.insert(name.clone(), Tensor::new(shape, data)).is_some() {
            return Err(AutodiffError::Checkpoint(format!(
                "duplicate parameter {name:?}"
            )));
        }
    }
    Ok((meta, tensors))
}
