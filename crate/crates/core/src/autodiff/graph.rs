//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Every call on [`Graph`] executes eagerly and appends one node holding the
//! result and whatever the backward pass needs. [`Graph::backward`] walks the
//! tape once in reverse, accumulating gradients additively.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Deliberate backward-pass corruption, used to prove the gradient checker
/// actually catches broken derivatives.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    FlipTanhBackward,
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        lens: Vec<usize>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Row {
        x: Var,
        index: usize,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Softmax(Var),
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        gold: Vec<usize>,
        probs: Vec<f64>,
        weights: Vec<f64>,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    fault: Option<Fault>,
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.matrix_dims()
        .ok_or_else(|| Error::shape(op, format!("expected rank <= 2, got {:?}", t.shape())))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Differentiable leaf that is not backed by a parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = dims("matmul", ta)?;
        if tb.rank() != 2 || tb.shape()[0] != k {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let m = tb.shape()[1];
        let mut out = vec![0.0; n * m];
        matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
        let shape = if ta.rank() == 2 { vec![n, m] } else { vec![m] };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = dims("transpose", t)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, c) = dims("add_row", tx)?;
        if tb.len() != c {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + bias {:?}", tx.shape(), tb.shape()),
            ));
        }
        let out = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % c])
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(value, Op::AddRow(x, bias), &[x, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v * factor).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let t = self.value(x);
        let f = match kind {
            Activation::Tanh => f64::tanh,
            Activation::Sigmoid => sigmoid,
            Activation::Relu => |v: f64| v.max(0.0),
        };
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        self.push(value, Op::Act(x, kind), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    /// Row gather from a `[V, d]` table; always returns a `[len, d]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::shape("embedding", format!("table {:?}", t.shape())));
        }
        let (vocab, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::OutOfRange {
                    what: "embedding",
                    index: id,
                    size: vocab,
                });
            }
            out.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Column-wise pooling of `[n, d]` down to `[d]`.
    pub fn pool(&mut self, kind: PoolKind, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, d) = dims("pool", t)?;
        if n == 0 {
            return Err(Error::EmptyPool);
        }
        let data = t.data();
        let mut out = vec![0.0; d];
        let mut argmax = Vec::new();
        match kind {
            PoolKind::Mean => {
                for row in data.chunks(d) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|o| *o /= n as f64);
            }
            PoolKind::Max => {
                argmax = vec![0; d];
                out.copy_from_slice(&data[..d]);
                for (r, row) in data.chunks(d).enumerate().skip(1) {
                    for j in 0..d {
                        // strict comparison keeps the lowest index on ties
                        if row[j] > out[j] {
                            out[j] = row[j];
                            argmax[j] = r;
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::vector(out), Op::Pool { x, kind, argmax }, &[x]))
    }

    /// Mean of consecutive row groups: `[n, d]` with group sizes summing to
    /// `n` becomes `[groups, d]`.
    pub fn segment_mean(&mut self, x: Var, lens: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (n, d) = dims("segment_mean", t)?;
        if lens.iter().sum::<usize>() != n || lens.contains(&0) {
            return Err(Error::shape(
                "segment_mean",
                format!("segments {lens:?} do not tile {n} rows"),
            ));
        }
        let mut out = vec![0.0; lens.len() * d];
        let mut row = 0;
        for (s, &len) in lens.iter().enumerate() {
            let o = &mut out[s * d..(s + 1) * d];
            for r in row..row + len {
                for (acc, v) in o.iter_mut().zip(&t.data()[r * d..(r + 1) * d]) {
                    *acc += v;
                }
            }
            o.iter_mut().for_each(|v| *v /= len as f64);
            row += len;
        }
        let value = Tensor::new(vec![lens.len(), d], out)?;
        Ok(self.push(
            value,
            Op::SegmentMean {
                x,
                lens: lens.to_vec(),
            },
            &[x],
        ))
    }

    /// Same-length 1-D convolution over rows with `⌊w/2⌋` zero padding.
    /// `kernel` is `[w, d_in, d_out]`, `bias` is `[d_out]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        let (n, d_in) = dims("conv1d", tx)?;
        let ks = tk.shape();
        if ks.len() != 3 || ks[0] == 0 || ks[1] != d_in || tb.len() != ks[2] {
            return Err(Error::shape(
                "conv1d",
                format!("x {:?}, kernel {:?}, bias {:?}", tx.shape(), ks, tb.shape()),
            ));
        }
        let (w, d_out) = (ks[0], ks[2]);
        let pad = w / 2;
        let mut out = vec![0.0; n * d_out];
        for t in 0..n {
            let o = &mut out[t * d_out..(t + 1) * d_out];
            o.copy_from_slice(tb.data());
            for j in 0..w {
                let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < n) else {
                    continue;
                };
                let xr = &tx.data()[src * d_in..(src + 1) * d_in];
                let kj = &tk.data()[j * d_in * d_out..(j + 1) * d_in * d_out];
                for (a, &xv) in xr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (ov, kv) in o.iter_mut().zip(&kj[a * d_out..(a + 1) * d_out]) {
                        *ov += xv * kv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, d_out], out)?;
        Ok(self.push(value, Op::Conv1d { x, kernel, bias }, &[x, kernel, bias]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = dims("slice_cols", t)?;
        if start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {}) of {c} columns", start + len),
            ));
        }
        let out: Vec<f64> = (0..r)
            .flat_map(|i| t.data()[i * c + start..i * c + start + len].iter().copied())
            .collect();
        let shape = if t.rank() == 2 {
            vec![r, len]
        } else {
            vec![len]
        };
        Ok(self.push(Tensor::new(shape, out)?, Op::SliceCols { x, start }, &[x]))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, _) = dims("row", t)?;
        if index >= r {
            return Err(Error::OutOfRange {
                what: "row",
                index,
                size: r,
            });
        }
        let value = Tensor::vector(t.row(index).to_vec());
        Ok(self.push(value, Op::Row { x, index }, &[x]))
    }

    /// Stacks vectors or matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let (_, c) = dims("concat_rows", self.value(first))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, pc) = dims("concat_rows", t)?;
            if pc != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{pc} columns, expected {c}"),
                ));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, c], out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Softmax over all elements of `x`.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), softmax_slice(t.data())).expect("same shape");
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Inverted dropout. Eval mode and `p == 0` return `x` unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut impl rand::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mask { x, mask }, &[x]))
    }

    /// Mean negative log-likelihood of `gold` under row-wise softmax of
    /// `logits` (`[n, C]`).
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: &[usize]) -> Result<Var> {
        self.weighted_cross_entropy(logits, gold, None)
    }

    /// As [`Graph::softmax_cross_entropy`] with optional per-class weights;
    /// the weighted sum is divided by the total weight of the gold labels.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        gold: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let t = self.value(logits);
        let (n, c) = dims("softmax_cross_entropy", t)?;
        if gold.len() != n || n == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{n} rows of logits, {} gold labels", gold.len()),
            ));
        }
        if let Some(w) = class_weights {
            if w.len() != c {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("{} class weights for {c} classes", w.len()),
                ));
            }
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut weights = Vec::with_capacity(n);
        let mut loss = 0.0;
        for (i, &g) in gold.iter().enumerate() {
            if g >= c {
                return Err(Error::OutOfRange {
                    what: "gold label",
                    index: g,
                    size: c,
                });
            }
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let w = class_weights.map_or(1.0, |w| w[g]);
            loss -= w * (row[g] - log_z);
            weights.push(w);
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let value = Tensor::scalar(loss / total);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                gold: gold.to_vec(),
                probs,
                weights,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse pass seeded with d(output)/d(output) = 1 on a single-element
    /// node. May run only once per graph until [`Graph::reset`].
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(output).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "output must be a scalar, got {:?}",
                    self.value(output).shape()
                ),
            ));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(grad) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &grad);
            self.grads[id] = Some(grad);
        }
        Ok(())
    }

    /// Drops accumulated gradients so that `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter reached by the last backward pass.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g.to_vec())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn accumulate_slice(&mut self, v: Var, delta: &[f64]) {
        self.accumulate(v, |g| {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        });
    }

    fn propagate(&mut self, id: usize, grad: &[f64]) {
        // Ops are moved out temporarily so their saved data can be borrowed
        // while gradients of earlier nodes are mutated.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                let (n, k) = self.value(a).matrix_dims().expect("checked in forward");
                let m = self.value(b).shape()[1];
                if self.nodes[a.0].requires_grad {
                    // dA = dC · Bᵀ
                    let bt = self.value(b).data();
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let gr = &grad[i * m..(i + 1) * m];
                        for p in 0..k {
                            let br = &bt[p * m..(p + 1) * m];
                            da[i * k + p] = gr.iter().zip(br).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate_slice(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · dC
                    let at = self.value(a).data();
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let gr = &grad[i * m..(i + 1) * m];
                        for p in 0..k {
                            let av = at[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (d, g) in db[p * m..(p + 1) * m].iter_mut().zip(gr) {
                                *d += av * g;
                            }
                        }
                    }
                    self.accumulate_slice(b, &db);
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = self.value(x).matrix_dims().expect("checked in forward");
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = grad[j * r + i];
                    }
                }
                self.accumulate_slice(x, &dx);
            }
            &Op::Add(a, b) => {
                self.accumulate_slice(a, grad);
                self.accumulate_slice(b, grad);
            }
            &Op::AddRow(x, bias) => {
                self.accumulate_slice(x, grad);
                let c = self.value(bias).len();
                let mut db = vec![0.0; c];
                for (i, g) in grad.iter().enumerate() {
                    db[i % c] += g;
                }
                self.accumulate_slice(bias, &db);
            }
            &Op::Mul(a, b) => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(g, v)| g * v)
                    .collect();
                let db: Vec<f64> = grad
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(g, v)| g * v)
                    .collect();
                self.accumulate_slice(a, &da);
                self.accumulate_slice(b, &db);
            }
            &Op::Scale(x, factor) => {
                let dx: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                self.accumulate_slice(x, &dx);
            }
            &Op::Act(x, kind) => {
                let y = self.nodes[id].value.data();
                let flip = kind == Activation::Tanh && self.fault == Some(Fault::FlipTanhBackward);
                let dx: Vec<f64> = grad
                    .iter()
                    .zip(y)
                    .map(|(g, &y)| {
                        let d = match kind {
                            Activation::Tanh => 1.0 - y * y,
                            Activation::Sigmoid => y * (1.0 - y),
                            Activation::Relu => f64::from(u8::from(y > 0.0)),
                        };
                        if flip {
                            -g * d
                        } else {
                            g * d
                        }
                    })
                    .collect();
                self.accumulate_slice(x, &dx);
            }
            Op::Gather { table, ids } => {
                let d = self.value(*table).shape()[1];
                self.accumulate(*table, |g| {
                    for (r, &row) in ids.iter().enumerate() {
                        for (a, b) in g[row * d..(row + 1) * d]
                            .iter_mut()
                            .zip(&grad[r * d..(r + 1) * d])
                        {
                            *a += b;
                        }
                    }
                });
            }
            Op::Pool { x, kind, argmax } => {
                let (n, d) = self.value(*x).matrix_dims().expect("checked in forward");
                let mut dx = vec![0.0; n * d];
                match kind {
                    PoolKind::Mean => {
                        for r in 0..n {
                            for j in 0..d {
                                dx[r * d + j] = grad[j] / n as f64;
                            }
                        }
                    }
                    PoolKind::Max => {
                        for (j, &r) in argmax.iter().enumerate() {
                            dx[r * d + j] = grad[j];
                        }
                    }
                }
                self.accumulate_slice(*x, &dx);
            }
            Op::SegmentMean { x, lens } => {
                let (n, d) = self.value(*x).matrix_dims().expect("checked in forward");
                let mut dx = vec![0.0; n * d];
                let mut row = 0;
                for (s, &len) in lens.iter().enumerate() {
                    let gs = &grad[s * d..(s + 1) * d];
                    for r in row..row + len {
                        for (a, g) in dx[r * d..(r + 1) * d].iter_mut().zip(gs) {
                            *a = g / len as f64;
                        }
                    }
                    row += len;
                }
                self.accumulate_slice(*x, &dx);
            }
            &Op::Conv1d { x, kernel, bias } => {
                let (n, d_in) = self.value(x).matrix_dims().expect("checked in forward");
                let ks = self.value(kernel).shape().to_vec();
                let (w, d_out) = (ks[0], ks[2]);
                let pad = w / 2;
                let xv = self.value(x).data();
                let kv = self.value(kernel).data();
                let mut dx = vec![0.0; n * d_in];
                let mut dk = vec![0.0; w * d_in * d_out];
                let mut db = vec![0.0; d_out];
                for t in 0..n {
                    let go = &grad[t * d_out..(t + 1) * d_out];
                    for (b, g) in db.iter_mut().zip(go) {
                        *b += g;
                    }
                    for j in 0..w {
                        let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < n) else {
                            continue;
                        };
                        for a in 0..d_in {
                            let base = (j * d_in + a) * d_out;
                            let krow = &kv[base..base + d_out];
                            dx[src * d_in + a] +=
                                krow.iter().zip(go).map(|(k, g)| k * g).sum::<f64>();
                            let xa = xv[src * d_in + a];
                            for (dkv, g) in dk[base..base + d_out].iter_mut().zip(go) {
                                *dkv += xa * g;
                            }
                        }
                    }
                }
                self.accumulate_slice(x, &dx);
                self.accumulate_slice(kernel, &dk);
                self.accumulate_slice(bias, &db);
            }
            &Op::SliceCols { x, start } => {
                let (r, c) = self.value(x).matrix_dims().expect("checked in forward");
                let len = grad.len() / r.max(1);
                self.accumulate(x, |g| {
                    for i in 0..r {
                        for j in 0..len {
                            g[i * c + start + j] += grad[i * len + j];
                        }
                    }
                });
            }
            &Op::Row { x, index } => {
                let (_, c) = self.value(x).matrix_dims().expect("checked in forward");
                self.accumulate(x, |g| {
                    for (a, b) in g[index * c..(index + 1) * c].iter_mut().zip(grad) {
                        *a += b;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate_slice(p, &grad[offset..offset + len]);
                    offset += len;
                }
            }
            &Op::Reshape(x) => self.accumulate_slice(x, grad),
            &Op::Softmax(x) => {
                let y = self.nodes[id].value.data();
                let dot: f64 = y.iter().zip(grad).map(|(a, b)| a * b).sum();
                let dx: Vec<f64> = y.iter().zip(grad).map(|(y, g)| y * (g - dot)).collect();
                self.accumulate_slice(x, &dx);
            }
            Op::Mask { x, mask } => {
                let dx: Vec<f64> = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate_slice(*x, &dx);
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
                weights,
            } => {
                let c = probs.len() / gold.len();
                let scale = grad[0];
                let mut dx = probs.clone();
                for (i, &g) in gold.iter().enumerate() {
                    dx[i * c + g] -= 1.0;
                    for v in &mut dx[i * c..(i + 1) * c] {
                        *v *= weights[i] * scale;
                    }
                }
                self.accumulate_slice(*logits, &dx);
            }
            &Op::Sum(x) => {
                let g = grad[0];
                self.accumulate(x, |acc| acc.iter_mut().for_each(|a| *a += g));
            }
        }
        self.nodes[id].op = op;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, bv) in o.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *ov += av * bv;
            }
        }
    }
}
