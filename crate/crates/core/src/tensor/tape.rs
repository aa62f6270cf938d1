use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::{dims2, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) tape: u64,
    pub(crate) idx: usize,
}

pub(crate) enum Values {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl Values {
    #[inline]
    pub(crate) fn as_slice(&self) -> &[f64] {
        match self {
            Values::Owned(v) => v,
            Values::Shared(v) => v,
        }
    }
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Values,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Recorded operation. Indices refer to earlier nodes on the same tape.
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    AddBias(usize, usize),
    Concat(Vec<usize>),
    SliceCols {
        input: usize,
        start: usize,
    },
    Softmax {
        input: usize,
        temperature: f64,
    },
    MaskedSoftmax {
        input: usize,
        lens: Vec<usize>,
    },
    LogSoftmax(usize),
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Scores {
        query: usize,
        memory: usize,
        lens: Vec<usize>,
    },
    WeightedSum {
        weights: usize,
        memory: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    GumbelSt {
        logits: usize,
        soft: Vec<f64>,
        temperature: f64,
    },
    Sum(usize),
    SumCols(usize),
    SelectRows {
        keep_new: Vec<bool>,
        new: usize,
        old: usize,
    },
    Stack {
        parts: Vec<usize>,
    },
    Custom {
        inputs: Vec<usize>,
        vjp: Vjp,
    },
}

/// Vector-Jacobian product of a custom operation: maps the upstream
/// gradient to one gradient per input.
pub type Vjp = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

/// Ordered record of operations supporting one reverse sweep.
///
/// A tape is confined to one thread. Every [`Var`] carries the id of the
/// tape that created it; handing a var to a different tape is an error.
pub struct Tape {
    pub(crate) id: u64,
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    backward_done: bool,
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
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::DetachedTape {
                expected: self.id,
                found: v.tape,
            });
        }
        Ok(v.idx)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = self.op_requires_grad(&op);
        self.nodes.push(Node {
            shape,
            value: Values::Owned(value),
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |i: &usize| self.nodes[*i].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                rg(a) || rg(b)
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::SumCols(a) => rg(a),
            Op::SliceCols { input, .. }
            | Op::Softmax { input, .. }
            | Op::MaskedSoftmax { input, .. }
            | Op::MaxPool { input, .. } => rg(input),
            Op::Concat(parts) | Op::Stack { parts } | Op::Custom { inputs: parts, .. } => {
                parts.iter().any(rg)
            }
            Op::Embedding { table, .. } => rg(table),
            Op::Scores { query, memory, .. } => rg(query) || rg(memory),
            Op::WeightedSum { weights, memory } => rg(weights) || rg(memory),
            Op::CrossEntropy { logits, .. } | Op::GumbelSt { logits, .. } => rg(logits),
            Op::SelectRows { new, old, .. } => rg(new) || rg(old),
        }
    }

    /// Leaf sharing the tensor's buffer. Gradients accumulate on the tape.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Values::Shared(t.shared()),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Constant built from raw parts.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let i = self.check(v).expect("value: var from another tape");
        self.nodes[i].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        let i = self.check(v).expect("shape: var from another tape");
        &self.nodes[i].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        let i = self.check(v).expect("requires_grad: var from another tape");
        self.nodes[i].requires_grad
    }

    /// First element of a value; convenient for scalars.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Copy of a value as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let i = self.check(v).expect("tensor: var from another tape");
        let n = &self.nodes[i];
        Tensor::new(n.shape.clone(), n.value.as_slice().to_vec()).expect("node shape is valid")
    }

    pub(crate) fn val(&self, i: usize) -> &[f64] {
        self.nodes[i].value.as_slice()
    }

    pub(crate) fn dims(&self, i: usize) -> (usize, usize) {
        dims2(&self.nodes[i].shape)
    }

    /// Accumulated gradient of the last backward pass, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let i = self.check(v).ok()?;
        match self.grads.get(i) {
            Some(g) if !g.is_empty() => Some(g),
            _ => None,
        }
    }

    /// Gradient of `v` or zeros when none reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.value(v).len()],
        }
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss)?;
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.nodes[li].value.as_slice().len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[li].shape.clone()));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        self.grads[li] = vec![1.0];
        for i in (0..=li).rev() {
            if self.grads[i].is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = core::mem::take(&mut self.grads[i]);
            self.backward_node(i, &g);
            self.grads[i] = g;
        }
        Ok(())
    }

    fn acc(&mut self, j: usize) -> Option<&mut [f64]> {
        if !self.nodes[j].requires_grad {
            return None;
        }
        if self.grads[j].is_empty() {
            self.grads[j] = vec![0.0; self.nodes[j].value.as_slice().len()];
        }
        Some(&mut self.grads[j])
    }

    fn acc_with(&mut self, j: usize, f: impl Fn(usize) -> f64) {
        if let Some(dst) = self.acc(j) {
            for (k, d) in dst.iter_mut().enumerate() {
                *d += f(k);
            }
        }
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        // The op is moved out so node values stay borrowable while
        // gradients are written; it is restored at the end.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.dims(a);
                let (_, n) = self.dims(b);
                if self.nodes[a].requires_grad {
                    let bv = Arc::new(self.val(b).to_vec());
                    let da = self.acc(a).unwrap();
                    // dA += dC · Bᵀ
                    super::ops::gemm(m, n, k, g, n, 1, &bv, 1, n, da, 1.0);
                }
                if self.nodes[b].requires_grad {
                    let av = Arc::new(self.val(a).to_vec());
                    let db = self.acc(b).unwrap();
                    // dB += Aᵀ · dC
                    super::ops::gemm(k, m, n, &av, 1, k, g, n, 1, db, 1.0);
                }
            }
            &Op::Add(a, b) => {
                self.acc_with(a, |k| g[k]);
                self.acc_with(b, |k| g[k]);
            }
            &Op::Sub(a, b) => {
                self.acc_with(a, |k| g[k]);
                self.acc_with(b, |k| -g[k]);
            }
            &Op::Mul(a, b) => {
                let bv = self.val(b).to_vec();
                let av = self.val(a).to_vec();
                self.acc_with(a, |k| g[k] * bv[k]);
                self.acc_with(b, |k| g[k] * av[k]);
            }
            &Op::Scale(a, s) => self.acc_with(a, |k| g[k] * s),
            &Op::Tanh(a) => {
                let y = self.val(i).to_vec();
                self.acc_with(a, |k| g[k] * (1.0 - y[k] * y[k]));
            }
            &Op::Sigmoid(a) => {
                let y = self.val(i).to_vec();
                self.acc_with(a, |k| g[k] * y[k] * (1.0 - y[k]));
            }
            &Op::Exp(a) => {
                let y = self.val(i).to_vec();
                self.acc_with(a, |k| g[k] * y[k]);
            }
            &Op::Log(a) => {
                let x = self.val(a).to_vec();
                self.acc_with(a, |k| g[k] / x[k]);
            }
            &Op::AddBias(x, b) => {
                self.acc_with(x, |k| g[k]);
                let (rows, cols) = self.dims(x);
                if let Some(db) = self.acc(b) {
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = self.dims(i);
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.dims(p);
                    if let Some(dp) = self.acc(p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (d, s) in dp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += w;
                }
            }
            &Op::SliceCols { input, start } => {
                let (rows, w) = self.dims(i);
                let (_, cols) = self.dims(input);
                if let Some(dx) = self.acc(input) {
                    for r in 0..rows {
                        for c in 0..w {
                            dx[r * cols + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            &Op::Softmax { input, temperature } => {
                let (rows, cols) = self.dims(i);
                let y = self.val(i).to_vec();
                if let Some(dx) = self.acc(input) {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx[r * cols + c] += yr[c] * (gr[c] - dot) / temperature;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { input, lens } => {
                let (rows, cols) = self.dims(i);
                let y = self.val(i).to_vec();
                if let Some(dx) = self.acc(*input) {
                    for r in 0..rows {
                        let n = lens[r];
                        let yr = &y[r * cols..r * cols + n];
                        let gr = &g[r * cols..r * cols + n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            dx[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let (rows, cols) = self.dims(i);
                let y = self.val(i).to_vec();
                if let Some(dx) = self.acc(a) {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let total: f64 = gr.iter().sum();
                        for c in 0..cols {
                            dx[r * cols + c] += gr[c] - crate::math::exp(y[r * cols + c]) * total;
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let (_, d) = self.dims(*table);
                if let Some(dt) = self.acc(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(dx) = self.acc(*input) {
                    for (k, &src) in argmax.iter().enumerate() {
                        if src != usize::MAX {
                            dx[src] += g[k];
                        }
                    }
                }
            }
            Op::Scores {
                query,
                memory,
                lens,
            } => {
                let (b, d) = self.dims(*query);
                let (_, m) = self.dims(i);
                let qv = self.val(*query).to_vec();
                let mv = self.val(*memory).to_vec();
                if let Some(dq) = self.acc(*query) {
                    for r in 0..b {
                        for j in 0..lens[r] {
                            let gj = g[r * m + j];
                            let row = &mv[(r * m + j) * d..(r * m + j + 1) * d];
                            for c in 0..d {
                                dq[r * d + c] += gj * row[c];
                            }
                        }
                    }
                }
                if let Some(dm) = self.acc(*memory) {
                    for r in 0..b {
                        for j in 0..lens[r] {
                            let gj = g[r * m + j];
                            for c in 0..d {
                                dm[(r * m + j) * d + c] += gj * qv[r * d + c];
                            }
                        }
                    }
                }
            }
            &Op::WeightedSum { weights, memory } => {
                let (b, m) = self.dims(weights);
                let (_, d) = self.dims(memory);
                let wv = self.val(weights).to_vec();
                let mv = self.val(memory).to_vec();
                if let Some(dw) = self.acc(weights) {
                    for r in 0..b {
                        for j in 0..m {
                            let row = &mv[(r * m + j) * d..(r * m + j + 1) * d];
                            let gr = &g[r * d..(r + 1) * d];
                            dw[r * m + j] += row.iter().zip(gr).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(dm) = self.acc(memory) {
                    for r in 0..b {
                        for j in 0..m {
                            let w = wv[r * m + j];
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                dm[(r * m + j) * d + c] += w * g[r * d + c];
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let (rows, cols) = self.dims(*logits);
                let x = self.val(*logits).to_vec();
                if let Some(dx) = self.acc(*logits) {
                    for r in 0..rows {
                        let scale = g[r] * weights[r];
                        if scale == 0.0 {
                            continue;
                        }
                        let xr = &x[r * cols..(r + 1) * cols];
                        let p = super::ops::softmax_row(xr, 1.0);
                        for c in 0..cols {
                            let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                            dx[r * cols + c] += scale * (p[c] - onehot);
                        }
                    }
                }
            }
            Op::GumbelSt {
                logits,
                soft,
                temperature,
            } => {
                let (rows, cols) = self.dims(*logits);
                if let Some(dx) = self.acc(*logits) {
                    for r in 0..rows {
                        let yr = &soft[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx[r * cols + c] += yr[c] * (gr[c] - dot) / temperature;
                        }
                    }
                }
            }
            &Op::Sum(a) => self.acc_with(a, |_| g[0]),
            &Op::SumCols(a) => {
                let (_, cols) = self.dims(a);
                self.acc_with(a, |k| g[k / cols]);
            }
            Op::SelectRows { keep_new, new, old } => {
                let (_, cols) = self.dims(i);
                let keep = keep_new.clone();
                self.acc_with(*new, |k| if keep[k / cols] { g[k] } else { 0.0 });
                self.acc_with(*old, |k| if keep[k / cols] { 0.0 } else { g[k] });
            }
            Op::Stack { parts } => {
                let t_len = parts.len();
                let (b, d) = self.dims(parts[0]);
                for (t, &p) in parts.iter().enumerate() {
                    if let Some(dp) = self.acc(p) {
                        for r in 0..b {
                            let src = &g[(r * t_len + t) * d..(r * t_len + t + 1) * d];
                            for (x, s) in dp[r * d..(r + 1) * d].iter_mut().zip(src) {
                                *x += s;
                            }
                        }
                    }
                }
            }
            Op::Custom { inputs, vjp } => {
                let grads = vjp(g);
                for (&j, gj) in inputs.iter().zip(grads) {
                    self.acc_with(j, |k| gj[k]);
                }
            }
        }
        self.nodes[i].op = op;
    }
}
