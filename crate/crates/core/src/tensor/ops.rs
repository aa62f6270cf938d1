use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::math;

/// `C += A·B` for an `m×k` by `k×n` product with arbitrary operand strides.
/// `c` is row-major `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the caller guarantees that every strided index touched by the
    // kernel lies inside `a`, `b` and `c`; each call site derives the
    // strides from the shapes of the slices it passes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Softmax of `xs / temperature`.
pub(crate) fn softmax_row(xs: &[f64], temperature: f64) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| math::exp((x - max) / temperature)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn with_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    match s.last_mut() {
        Some(l) => *l = last,
        None => s.push(last),
    }
    s
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(shape_err(op, &self.nodes[ia].shape, &self.nodes[ib].shape));
        }
        Ok((ia, ib))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).iter().map(|&x| f(x)).collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, op(ia)))
    }

    /// Matrix product; leading axes of `a` fold into rows, `b` is `k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.dims(ia);
        let bs = &self.nodes[ib].shape;
        if bs.len() != 2 || bs[0] != k {
            return Err(shape_err("matmul", &self.nodes[ia].shape, bs));
        }
        let n = bs[1];
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.val(ia), k, 1, self.val(ib), n, 1, &mut out, 0.0);
        let shape = with_last(&self.nodes[ia].shape, n);
        Ok(self.push(shape, out, Op::MatMul(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.same_shape("add", a, b)?;
        let out = self.val(ia).iter().zip(self.val(ib)).map(|(x, y)| x + y).collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.same_shape("sub", a, b)?;
        let out = self.val(ia).iter().zip(self.val(ib)).map(|(x, y)| x - y).collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::Sub(ia, ib)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.same_shape("mul", a, b)?;
        let out = self.val(ia).iter().zip(self.val(ib)).map(|(x, y)| x * y).collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |x| x * s, |i| Op::Scale(i, s))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, math::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, math::sigmoid, Op::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, math::exp, Op::Exp)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        if let Some(&x) = self.val(ia).iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("input {x} is not positive"),
            });
        }
        self.unary(a, math::ln, Op::Log)
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(b)?);
        let (_, cols) = self.dims(ix);
        if self.val(ib).len() != cols {
            return Err(shape_err("add_bias", &self.nodes[ix].shape, &self.nodes[ib].shape));
        }
        let bv = self.val(ib);
        let out = self
            .val(ix)
            .iter()
            .enumerate()
            .map(|(k, &v)| v + bv[k % cols])
            .collect();
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(shape, out, Op::AddBias(ix, ib)))
    }

    /// `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Column-wise concatenation of parts with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let first = *idx.first().ok_or(Error::Empty("concat inputs"))?;
        let (rows, _) = self.dims(first);
        let mut total = 0;
        for &p in &idx {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(shape_err("concat", &self.nodes[first].shape, &self.nodes[p].shape));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in &idx {
                let (_, c) = self.dims(p);
                out.extend_from_slice(&self.val(p)[r * c..(r + 1) * c]);
            }
        }
        let shape = with_last(&self.nodes[first].shape, total);
        Ok(self.push(shape, out, Op::Concat(idx)))
    }

    /// Columns `start..start + width` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (rows, cols) = self.dims(ix);
        if width == 0 || start + width > cols {
            return Err(shape_err("slice_cols", &self.nodes[ix].shape, &[start, width]));
        }
        let v = self.val(ix);
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + width]);
        }
        let shape = with_last(&self.nodes[ix].shape, width);
        Ok(self.push(shape, out, Op::SliceCols { input: ix, start }))
    }

    /// Row-wise softmax of `x / temperature`.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::NonPositive {
                what: "temperature",
                value: temperature,
            });
        }
        let ix = self.check(x)?;
        let (rows, cols) = self.dims(ix);
        let v = self.val(ix);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(softmax_row(&v[r * cols..(r + 1) * cols], temperature));
        }
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(shape, out, Op::Softmax { input: ix, temperature }))
    }

    /// Row-wise softmax over the first `lens[r]` columns; the rest are zero.
    pub fn masked_softmax(&mut self, x: Var, lens: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let (rows, cols) = self.dims(ix);
        if lens.len() != rows || lens.iter().any(|&n| n == 0 || n > cols) {
            return Err(shape_err("masked_softmax", &self.nodes[ix].shape, lens));
        }
        let v = self.val(ix);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let n = lens[r];
            let p = softmax_row(&v[r * cols..r * cols + n], 1.0);
            out[r * cols..r * cols + n].copy_from_slice(&p);
        }
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(
            shape,
            out,
            Op::MaskedSoftmax {
                input: ix,
                lens: lens.to_vec(),
            },
        ))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let (rows, cols) = self.dims(ix);
        let v = self.val(ix);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let lse = math::log_sum_exp(row);
            out.extend(row.iter().map(|&x| x - lse));
        }
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(shape, out, Op::LogSoftmax(ix)))
    }

    /// Rows of `table` selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let (v, d) = self.dims(it);
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids"));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::IdOutOfRange { id, size: v });
        }
        let tv = self.val(it);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Max over non-overlapping windows of `window` steps.
    ///
    /// `x` is `[B, T, d]` with `lens[b]` valid steps per row. Returns the
    /// pooled `[B, ceil(T / window), d]` tensor and the pooled lengths;
    /// positions past a row's pooled length are zero.
    pub fn max_pool(&mut self, x: Var, lens: &[usize], window: usize) -> Result<(Var, Vec<usize>)> {
        let ix = self.check(x)?;
        let shape = self.nodes[ix].shape.clone();
        if window == 0 {
            return Err(Error::NonPositive {
                what: "pool window",
                value: 0.0,
            });
        }
        if shape.len() != 3 || lens.len() != shape[0] || lens.iter().any(|&n| n == 0 || n > shape[1]) {
            return Err(shape_err("max_pool", &shape, lens));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let m = t.div_ceil(window);
        let v = self.val(ix);
        let mut out = vec![0.0; b * m * d];
        let mut argmax = vec![usize::MAX; b * m * d];
        let mut pooled = Vec::with_capacity(b);
        for r in 0..b {
            let pl = lens[r].div_ceil(window);
            pooled.push(pl);
            for j in 0..pl {
                let lo = j * window;
                let hi = (lo + window).min(lens[r]);
                for c in 0..d {
                    let mut best = (r * t + lo) * d + c;
                    for s in lo + 1..hi {
                        let k = (r * t + s) * d + c;
                        if v[k] > v[best] {
                            best = k;
                        }
                    }
                    out[(r * m + j) * d + c] = v[best];
                    argmax[(r * m + j) * d + c] = best;
                }
            }
        }
        let var = self.push(vec![b, m, d], out, Op::MaxPool { input: ix, argmax });
        Ok((var, pooled))
    }

    /// Dot products between each query row and its memory rows.
    ///
    /// `query` is `[B, d]`, `memory` is `[B, M, d]`; entries at or past
    /// `lens[b]` are zero in the `[B, M]` result.
    pub fn scores(&mut self, query: Var, memory: Var, lens: &[usize]) -> Result<Var> {
        let (iq, im) = (self.check(query)?, self.check(memory)?);
        let (b, d) = self.dims(iq);
        let ms = self.nodes[im].shape.clone();
        if ms.len() != 3 || ms[0] != b || ms[2] != d || lens.len() != b || lens.iter().any(|&n| n > ms[1]) {
            return Err(shape_err("scores", &self.nodes[iq].shape, &ms));
        }
        let m = ms[1];
        let (qv, mv) = (self.val(iq), self.val(im));
        let mut out = vec![0.0; b * m];
        for r in 0..b {
            let q = &qv[r * d..(r + 1) * d];
            for j in 0..lens[r] {
                let row = &mv[(r * m + j) * d..(r * m + j + 1) * d];
                out[r * m + j] = q.iter().zip(row).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(
            vec![b, m],
            out,
            Op::Scores {
                query: iq,
                memory: im,
                lens: lens.to_vec(),
            },
        ))
    }

    /// `out[b] = Σ_j weights[b, j] · memory[b, j]` for `[B, M]` weights and
    /// `[B, M, d]` memory.
    pub fn weighted_sum(&mut self, weights: Var, memory: Var) -> Result<Var> {
        let (iw, im) = (self.check(weights)?, self.check(memory)?);
        let (b, m) = self.dims(iw);
        let ms = self.nodes[im].shape.clone();
        if ms.len() != 3 || ms[0] != b || ms[1] != m {
            return Err(shape_err("weighted_sum", &self.nodes[iw].shape, &ms));
        }
        let d = ms[2];
        let (wv, mv) = (self.val(iw), self.val(im));
        let mut out = vec![0.0; b * d];
        for r in 0..b {
            for j in 0..m {
                let w = wv[r * m + j];
                if w == 0.0 {
                    continue;
                }
                let row = &mv[(r * m + j) * d..(r * m + j + 1) * d];
                for (o, x) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(
            vec![b, d],
            out,
            Op::WeightedSum {
                weights: iw,
                memory: im,
            },
        ))
    }

    /// Weighted negative log-likelihood per row: `weights[r] · -log softmax(logits[r])[targets[r]]`.
    ///
    /// Rows with zero weight contribute nothing, which is how padding is masked.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let il = self.check(logits)?;
        let (rows, cols) = self.dims(il);
        if targets.len() != rows || weights.len() != rows {
            return Err(shape_err("cross_entropy", &self.nodes[il].shape, &[targets.len(), weights.len()]));
        }
        if let Some(&id) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::IdOutOfRange { id, size: cols });
        }
        let v = self.val(il);
        let out = (0..rows)
            .map(|r| {
                if weights[r] == 0.0 {
                    return 0.0;
                }
                let row = &v[r * cols..(r + 1) * cols];
                weights[r] * (math::log_sum_exp(row) - row[targets[r]])
            })
            .collect();
        Ok(self.push(
            vec![rows],
            out,
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    /// Straight-through Gumbel-softmax.
    ///
    /// Forward yields the one-hot argmax of `logits + noise` per row; the
    /// backward pass uses the Jacobian of `softmax((logits + noise) / temperature)`.
    pub fn gumbel_st(&mut self, logits: Var, noise: &[f64], temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::NonPositive {
                what: "temperature",
                value: temperature,
            });
        }
        let il = self.check(logits)?;
        let (rows, cols) = self.dims(il);
        if noise.len() != rows * cols {
            return Err(shape_err("gumbel_st", &self.nodes[il].shape, &[noise.len()]));
        }
        let perturbed: Vec<f64> = self.val(il).iter().zip(noise).map(|(x, g)| x + g).collect();
        let mut soft = Vec::with_capacity(rows * cols);
        let mut hard = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &perturbed[r * cols..(r + 1) * cols];
            soft.extend(softmax_row(row, temperature));
            hard[r * cols + math::argmax(row)] = 1.0;
        }
        let shape = self.nodes[il].shape.clone();
        Ok(self.push(
            shape,
            hard,
            Op::GumbelSt {
                logits: il,
                soft,
                temperature,
            },
        ))
    }

    /// Sum of all entries as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.val(ix).iter().sum();
        Ok(self.push(vec![1], vec![s], Op::Sum(ix)))
    }

    /// Sum of each row, giving `[rows]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let (rows, cols) = self.dims(ix);
        let v = self.val(ix);
        let out = (0..rows).map(|r| v[r * cols..(r + 1) * cols].iter().sum()).collect();
        Ok(self.push(vec![rows], out, Op::SumCols(ix)))
    }

    /// Row `r` of `new` where `keep_new[r]`, otherwise row `r` of `old`.
    pub fn select_rows(&mut self, keep_new: &[bool], new: Var, old: Var) -> Result<Var> {
        let (inew, iold) = self.same_shape("select_rows", new, old)?;
        let (rows, cols) = self.dims(inew);
        if keep_new.len() != rows {
            return Err(shape_err("select_rows", &self.nodes[inew].shape, &[keep_new.len()]));
        }
        let (nv, ov) = (self.val(inew), self.val(iold));
        let out = (0..rows * cols)
            .map(|k| if keep_new[k / cols] { nv[k] } else { ov[k] })
            .collect();
        let shape = self.nodes[inew].shape.clone();
        Ok(self.push(
            shape,
            out,
            Op::SelectRows {
                keep_new: keep_new.to_vec(),
                new: inew,
                old: iold,
            },
        ))
    }

    /// Stacks `T` matrices of shape `[B, d]` into a batch-major `[B, T, d]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let first = *idx.first().ok_or(Error::Empty("stack inputs"))?;
        let (b, d) = self.dims(first);
        for &p in &idx {
            if self.dims(p) != (b, d) {
                return Err(shape_err("stack", &self.nodes[first].shape, &self.nodes[p].shape));
            }
        }
        let t = idx.len();
        let mut out = vec![0.0; b * t * d];
        for (s, &p) in idx.iter().enumerate() {
            let v = self.val(p);
            for r in 0..b {
                out[(r * t + s) * d..(r * t + s + 1) * d].copy_from_slice(&v[r * d..(r + 1) * d]);
            }
        }
        Ok(self.push(vec![b, t, d], out, Op::Stack { parts: idx }))
    }
}

impl Tape {
    /// Records an operation with a caller-supplied value and backward rule.
    ///
    /// `vjp` receives the upstream gradient and must return one gradient
    /// buffer per input, each matching that input's length.
    pub fn custom(&mut self, inputs: &[Var], shape: Vec<usize>, value: Vec<f64>, vjp: super::tape::Vjp) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        if shape.is_empty() || shape.iter().product::<usize>() != value.len() {
            return Err(shape_err("custom", &shape, &[value.len()]));
        }
        Ok(self.push(shape, value, Op::Custom { inputs: idx, vjp }))
    }
}
