//! Append-only Wengert tape over dense 2-D tensors.
//!
//! Every primitive records its inputs and, where the backward rule needs it,
//! a cached forward quantity. [`Tape::backward`] walks the tape once in
//! reverse order and writes `∂loss/∂leaf` into every differentiable leaf.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{matmul_at_into, matmul_bt_into, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Sqrt(usize),
    Square(usize),
    Log(usize),
    Sum(usize),
    Mean(usize),
    Slice {
        src: usize,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    Concat {
        parts: Vec<usize>,
        axis: Axis,
    },
    L2Norm(usize),
    LayerNorm {
        src: usize,
        inv_std: f64,
    },
    Max {
        src: usize,
        argmax: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
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

    /// Differentiable input; receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.idx].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.idx].value.grad()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Usage("variable does not belong to this tape".into()));
        }
        Ok(v.idx)
    }

    fn rg(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        // every tensor on the tape has rank <= 2 (checked when recorded)
        self.nodes[i].value.dims().unwrap_or((0, 0))
    }

    fn same_shape(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape(a, b, what)?;
        let (r, c) = self.dims(a);
        let data = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(r, c, data)?, op(a, b), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let a = self.check(a)?;
        let (r, c) = self.dims(a);
        let data = self.nodes[a].value.data().iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(r, c, data)?, op(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    /// `a(m×n) + row(1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(row)?);
        let (m, n) = self.dims(a);
        if self.dims(b) != (1, n) {
            return Err(Error::Shape(format!(
                "add_row: {:?} onto {m}x{n}",
                self.dims(b)
            )));
        }
        let bias = self.nodes[b].value.data();
        let data = self.nodes[a]
            .value
            .data()
            .chunks(n.max(1))
            .flat_map(|r| r.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let idx = self.check(a)?;
        let (r, c) = self.dims(idx);
        let data = self.nodes[idx].value.data().iter().map(|x| x * s).collect();
        let rg = self.rg(&[idx]);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Scale(idx, s), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |x| x + s, Op::AddScalar)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ai].value.matmul(&self.nodes[bi].value)?;
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(out, Op::MatMul(ai, bi), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let out = self.nodes[ai].value.transpose()?;
        let rg = self.rg(&[ai]);
        Ok(self.push(out, Op::Transpose(ai), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square)
    }

    /// Natural logarithm.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let s = self.nodes[ai].value.data().iter().sum();
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ai), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let v = self.nodes[ai].value.data();
        if v.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(ai), rg))
    }

    pub fn slice(&mut self, a: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let ai = self.check(a)?;
        let (r, c) = self.dims(ai);
        if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
            return Err(Error::Shape(format!(
                "slice {rows:?}x{cols:?} out of {r}x{c}"
            )));
        }
        let src = &self.nodes[ai].value;
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&src.data()[i * c + cols.start..i * c + cols.end]);
        }
        let out = Tensor::matrix(rows.len(), cols.len(), data)?;
        let rg = self.rg(&[ai]);
        Ok(self.push(
            out,
            Op::Slice {
                src: ai,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// Single row `r` as a `1×n` tensor.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let cols = self.check(a).map(|i| self.dims(i).1)?;
        self.slice(a, r..r + 1, 0..cols)
    }

    /// Column range of a row vector.
    pub fn cols(&mut self, a: Var, cols: Range<usize>) -> Result<Var> {
        let rows = self.check(a).map(|i| self.dims(i).0)?;
        self.slice(a, 0..rows, cols)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let idx: Vec<usize> = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<_>>()?;
        let dims: Vec<(usize, usize)> = idx.iter().map(|&i| self.dims(i)).collect();
        let out = match axis {
            Axis::Rows => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(Error::Shape(format!("row concat of {dims:?}")));
                }
                let data: Vec<f64> = idx
                    .iter()
                    .flat_map(|&i| self.nodes[i].value.data().iter().copied())
                    .collect();
                Tensor::matrix(dims.iter().map(|d| d.0).sum(), c, data)?
            }
            Axis::Cols => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(Error::Shape(format!("column concat of {dims:?}")));
                }
                let total: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * total);
                for row in 0..r {
                    for (&i, d) in idx.iter().zip(&dims) {
                        data.extend_from_slice(
                            &self.nodes[i].value.data()[row * d.1..(row + 1) * d.1],
                        );
                    }
                }
                Tensor::matrix(r, total, data)?
            }
        };
        let rg = self.rg(&idx);
        Ok(self.push(out, Op::Concat { parts: idx, axis }, rg))
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let n = self.nodes[ai]
            .value
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::scalar(n), Op::L2Norm(ai), rg))
    }

    /// Zero-mean, unit-variance normalization over all elements (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let (r, c) = self.dims(ai);
        let x = self.nodes[ai].value.data();
        if x.is_empty() {
            return Err(Error::Shape("layer_norm of an empty tensor".into()));
        }
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        let data = x.iter().map(|v| (v - mu) * inv_std).collect();
        let rg = self.rg(&[ai]);
        Ok(self.push(
            Tensor::matrix(r, c, data)?,
            Op::LayerNorm { src: ai, inv_std },
            rg,
        ))
    }

    /// Maximum element; ties resolve to the first index.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let x = self.nodes[ai].value.data();
        if x.is_empty() {
            return Err(Error::Shape("max of an empty tensor".into()));
        }
        let mut argmax = 0;
        for (i, &v) in x.iter().enumerate() {
            if v > x[argmax] {
                argmax = i;
            }
        }
        let m = x[argmax];
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::scalar(m), Op::Max { src: ai, argmax }, rg))
    }

    /// Reverse sweep from a scalar `loss`, filling the gradient buffer of every
    /// differentiable leaf. Leaves the loss does not reach get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if !self.nodes[li].requires_grad {
            return Err(Error::Usage(
                "loss does not depend on any differentiable leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |j: usize| self.nodes[j].value.data();
        let out = val(i);
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * vb[k];
                    }
                });
                self.acc(grads, *b, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * va[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / vb[k];
                    }
                });
                self.acc(grads, *b, |d| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * va[k] / (vb[k] * vb[k]);
                    }
                });
            }
            Op::AddRow(a, b) => {
                let n = self.dims(*b).1;
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                self.acc(grads, *b, |d| {
                    for row in g.chunks(n.max(1)) {
                        d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)
                });
            }
            Op::AddScalar(a) => {
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (va, vb) = (val(*a), val(*b));
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.acc(grads, *a, |d| matmul_bt_into(g, vb, d, m, n, k));
                self.acc(grads, *b, |d| matmul_at_into(va, g, d, k, m, n));
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                self.acc(grads, *a, |d| {
                    for x in 0..r {
                        for y in 0..c {
                            d[x * c + y] += g[y * r + x];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let va = val(*a);
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        if va[k] > 0.0 {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }),
            Op::Sqrt(a) => self.acc(grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * 0.5 / out[k];
                }
            }),
            Op::Square(a) => {
                let va = val(*a);
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * 2.0 * va[k];
                    }
                });
            }
            Op::Log(a) => {
                let va = val(*a);
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / va[k];
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Slice { src, rows, cols } => {
                let c = self.dims(*src).1;
                let w = cols.len();
                self.acc(grads, *src, |d| {
                    for (oi, i) in rows.clone().enumerate() {
                        for (oj, j) in cols.clone().enumerate() {
                            d[i * c + j] += g[oi * w + oj];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => match axis {
                Axis::Rows => {
                    let mut off = 0;
                    for &p in parts {
                        let n = val(p).len();
                        self.acc(grads, p, |d| {
                            d.iter_mut()
                                .zip(&g[off..off + n])
                                .for_each(|(x, y)| *x += y)
                        });
                        off += n;
                    }
                }
                Axis::Cols => {
                    let total = self.dims(i).1;
                    let mut col_off = 0;
                    for &p in parts {
                        let (r, c) = self.dims(p);
                        self.acc(grads, p, |d| {
                            for row in 0..r {
                                for j in 0..c {
                                    d[row * c + j] += g[row * total + col_off + j];
                                }
                            }
                        });
                        col_off += c;
                    }
                }
            },
            Op::L2Norm(a) => {
                let va = val(*a);
                let n = out[0];
                self.acc(grads, *a, |d| {
                    if n > 0.0 {
                        for k in 0..d.len() {
                            d[k] += g[0] * va[k] / n;
                        }
                    }
                });
            }
            Op::LayerNorm { src, inv_std } => {
                let n = out.len() as f64;
                let mean_g = g.iter().sum::<f64>() / n;
                let mean_gy = g.iter().zip(out).map(|(a, b)| a * b).sum::<f64>() / n;
                self.acc(grads, *src, |d| {
                    for k in 0..d.len() {
                        d[k] += inv_std * (g[k] - mean_g - out[k] * mean_gy);
                    }
                });
            }
            Op::Max { src, argmax } => self.acc(grads, *src, |d| d[*argmax] += g[0]),
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], j: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[j].requires_grad {
            return;
        }
        let n = self.nodes[j].value.len();
        let slot = grads[j].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
