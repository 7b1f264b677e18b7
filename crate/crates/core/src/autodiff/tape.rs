//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. Nodes that depend on a
//! `requires_grad` input keep their op so `backward` can replay them in
//! reverse recording order; everything else is stored as a plain constant.

use super::tensor::{matmul_raw, split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    OuterAdd(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Div(Var, Var),
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    SumAll(Var),
    MeanAll(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    Log(Var),
    Sqrt(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Output length of an unpadded strided 1-D convolution, or `None` when the
/// input is shorter than the kernel.
pub fn conv1d_output_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    conv_out_len(len, kernel, stride, 0)
}

fn im2col(x: &[f64], c_in: usize, len: usize, k: usize, stride: usize, pad: usize, t: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c_in * k * t];
    for c in 0..c_in {
        let row = &x[c * len..(c + 1) * len];
        for kk in 0..k {
            let dst = &mut cols[(c * k + kk) * t..(c * k + kk + 1) * t];
            for (ti, d) in dst.iter_mut().enumerate() {
                let pos = ti * stride + kk;
                if pos >= pad && pos - pad < len {
                    *d = row[pos - pad];
                }
            }
        }
    }
    cols
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

    /// Drops every recorded node and gradient buffer.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`; `None` for
    /// nodes that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        let data = match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => vec![0.0; self.nodes[v.0].value.numel()],
        };
        Some(Tensor::new(shape, data).expect("gradient shape matches value"))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) {
            if let Some(index) = value.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NumericFault { op: name, index });
            }
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    fn v(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn require_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("{op} expects a 2-D tensor"),
            });
        }
        Ok((s[0], s[1]))
    }

    fn check_axis(&self, op: &'static str, v: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(v).len() {
            return Err(Error::InvalidShape {
                shape: self.shape(v).to_vec(),
                reason: format!("{op}: axis {axis} out of range"),
            });
        }
        Ok(())
    }

    fn map(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.v(x);
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&a| f(a)).collect())?;
        self.record(name, out, op, &[x])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.v(a), self.v(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.record(name, out, op, &[a, b])
    }

    // ---- forward ops -------------------------------------------------------

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_2d("matmul", a)?;
        let (k2, n) = self.require_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(self.v(a).data(), self.v(b).data(), &mut out, m, k, n, false, false, false);
        self.record("matmul", Tensor::new([m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Strided 1-D convolution. `input` is `[c_in, len]`, `weight` is
    /// `[c_out, c_in, kernel]`, `bias` is `[c_out]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, len) = self.require_2d("conv1d", input)?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: vec![c_in, len],
                rhs: ws,
            });
        }
        let (c_out, k) = (ws[0], ws[2]);
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d bias",
                    lhs: vec![c_out],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let t = conv_out_len(len, k, stride, padding).ok_or(Error::TooShort {
            len: len + 2 * padding,
            min: k,
        })?;
        let cols = im2col(self.v(input).data(), c_in, len, k, stride, padding, t);
        let mut out = vec![0.0; c_out * t];
        matmul_raw(self.v(weight).data(), &cols, &mut out, c_out, c_in * k, t, false, false, false);
        if let Some(b) = bias {
            let bd = self.v(b).data();
            for (o, &bv) in out.chunks_mut(t).zip(bd) {
                o.iter_mut().for_each(|x| *x += bv);
            }
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.record(
            "conv1d",
            Tensor::new([c_out, t], out)?,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &inputs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.require_2d("add_row", x)?;
        if self.shape(row).iter().product::<usize>() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: vec![m, n],
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.v(row).data().to_vec();
        let mut data = self.v(x).data().to_vec();
        for chunk in data.chunks_mut(n) {
            chunk.iter_mut().zip(&r).for_each(|(d, b)| *d += b);
        }
        self.record("add_row", Tensor::new([m, n], data)?, Op::AddRow(x, row), &[x, row])
    }

    /// `out[i][j] = col[i] + row[j]`.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Result<Var> {
        let (c, r) = (self.v(col).data().to_vec(), self.v(row).data().to_vec());
        let (m, n) = (c.len(), r.len());
        let data = c.iter().flat_map(|a| r.iter().map(move |b| a + b)).collect();
        self.record("outer_add", Tensor::new([m, n], data)?, Op::OuterAdd(col, row), &[col, row])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", x, Op::AddScalar(x), |a| a + c)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("scale", x, Op::Scale(x, c), |a| a * c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map("leaky_relu", x, Op::LeakyRelu(x, slope), |a| if a > 0.0 { a } else { slope * a })
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map("gelu", x, Op::Gelu(x), gelu_scalar)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map("log", x, Op::Log(x), f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.map("sqrt", x, Op::Sqrt(x), f64::sqrt)
    }

    fn reduce_axis(&mut self, name: &'static str, x: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check_axis(name, x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.v(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= dim as f64);
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let op = if mean { Op::Mean { x, axis } } else { Op::Sum { x, axis } };
        self.record(name, Tensor::new(out_shape, out)?, op, &[x])
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("sum", x, axis, false)
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("mean", x, axis, true)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.v(x).sum();
        self.record("sum_all", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.v(x);
        let s = t.sum() / t.numel() as f64;
        self.record("mean_all", Tensor::scalar(s), Op::MeanAll(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "concat of zero tensors".into(),
        })?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis];
                let src = self.v(v).data();
                out.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        self.record(
            "concat",
            Tensor::new(out_shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let shape = self.shape(x).to_vec();
        if start >= end || end > shape[axis] {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("slice {start}..{end} out of range on axis {axis}"),
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let w = end - start;
        let src = self.v(x).data();
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * dim + start) * inner..(o * dim + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = w;
        self.record("slice", Tensor::new(out_shape, out)?, Op::Slice { x, axis, start }, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.require_2d("transpose", x)?;
        let t = self.v(x).transpose2();
        self.record("transpose", t, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.v(x).clone().reshape(shape.to_vec())?;
        self.record("reshape", t, Op::Reshape(x), &[x])
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, dim, inner) = split_axis(&shape, axis);
        let mut out = self.v(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * dim + d) * inner + i;
                let max = (0..dim).map(|d| out[idx(d)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for d in 0..dim {
                    let e = (out[idx(d)] - max).exp();
                    out[idx(d)] = e;
                    z += e;
                }
                for d in 0..dim {
                    out[idx(d)] /= z;
                }
            }
        }
        self.record("softmax", Tensor::new(shape, out)?, Op::Softmax { x, axis }, &[x])
    }

    /// Group normalization of a `[channels, time]` tensor with per-channel
    /// affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let (c, t) = self.require_2d("group_norm", x)?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::InvalidShape {
                shape: vec![c, t],
                reason: format!("{groups} groups do not divide {c} channels"),
            });
        }
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::ShapeMismatch {
                    op: "group_norm affine",
                    lhs: vec![c],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let per = c / groups * t;
        let src = self.v(x).data();
        let (g, b) = (self.v(gamma).data(), self.v(beta).data());
        let mut mean = vec![0.0; groups];
        let mut rstd = vec![0.0; groups];
        let mut out = vec![0.0; c * t];
        for gi in 0..groups {
            let chunk = &src[gi * per..(gi + 1) * per];
            let mu = chunk.iter().sum::<f64>() / per as f64;
            let var = chunk.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / per as f64;
            let r = 1.0 / (var + eps).sqrt();
            mean[gi] = mu;
            rstd[gi] = r;
            for idx in gi * per..(gi + 1) * per {
                let ch = idx / t;
                out[idx] = (src[idx] - mu) * r * g[ch] + b[ch];
            }
        }
        self.record(
            "group_norm",
            Tensor::new([c, t], out)?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits against
    /// integer labels, via a stable log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.require_2d("cross_entropy", logits)?;
        if labels.len() != b {
            return Err(Error::LengthMismatch(b, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidShape {
                shape: vec![b, c],
                reason: format!("label {bad} out of range"),
            });
        }
        let z = self.v(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        loss /= b as f64;
        self.record(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    // ---- reverse pass ------------------------------------------------------

    /// Accumulates d`loss`/d`v` into every reachable node that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let ls = self.shape(loss).to_vec();
        if !self.v(loss).is_scalar() {
            return Err(Error::NonScalarLoss(ls));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(buf);
    }

    fn acc_elementwise(&mut self, v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        self.acc(v, |buf| {
            for (i, (b, &gi)) in buf.iter_mut().zip(g).enumerate() {
                *b += f(i, gi);
            }
        });
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Temporarily take the op to release the borrow on `self.nodes`.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let bv = self.v(*b).data().to_vec();
                    self.acc(*a, |buf| matmul_raw(g, &bv, buf, m, n, k, false, true, true));
                }
                if self.requires_grad(*b) {
                    let av = self.v(*a).data().to_vec();
                    self.acc(*b, |buf| matmul_raw(&av, g, buf, k, m, n, true, false, true));
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (c_in, len) = (self.shape(*input)[0], self.shape(*input)[1]);
                let (c_out, k) = (self.shape(*weight)[0], self.shape(*weight)[2]);
                let t = g.len() / c_out;
                let ck = c_in * k;
                if self.requires_grad(*weight) {
                    let cols = im2col(self.v(*input).data(), c_in, len, k, *stride, *padding, t);
                    self.acc(*weight, |buf| matmul_raw(g, &cols, buf, c_out, t, ck, false, true, true));
                }
                if let Some(b) = bias {
                    self.acc(*b, |buf| {
                        for (bv, row) in buf.iter_mut().zip(g.chunks(t)) {
                            *bv += row.iter().sum::<f64>();
                        }
                    });
                }
                if self.requires_grad(*input) {
                    let w = self.v(*weight).data().to_vec();
                    let mut dcols = vec![0.0; ck * t];
                    matmul_raw(&w, g, &mut dcols, ck, c_out, t, true, false, false);
                    let (s, p) = (*stride, *padding);
                    self.acc(*input, |buf| {
                        for c in 0..c_in {
                            for kk in 0..k {
                                let src = &dcols[(c * k + kk) * t..(c * k + kk + 1) * t];
                                for (ti, &d) in src.iter().enumerate() {
                                    let pos = ti * s + kk;
                                    if pos >= p && pos - p < len {
                                        buf[c * len + pos - p] += d;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.acc_elementwise(*a, g, |_, gi| gi);
                self.acc_elementwise(*b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.acc_elementwise(*a, g, |_, gi| gi);
                self.acc_elementwise(*b, g, |_, gi| -gi);
            }
            Op::AddRow(x, row) => {
                self.acc_elementwise(*x, g, |_, gi| gi);
                let n = self.v(*row).numel();
                self.acc(*row, |buf| {
                    for chunk in g.chunks(n) {
                        buf.iter_mut().zip(chunk).for_each(|(b, gi)| *b += gi);
                    }
                });
            }
            Op::OuterAdd(col, row) => {
                let n = self.v(*row).numel();
                self.acc(*col, |buf| {
                    for (b, chunk) in buf.iter_mut().zip(g.chunks(n)) {
                        *b += chunk.iter().sum::<f64>();
                    }
                });
                self.acc(*row, |buf| {
                    for chunk in g.chunks(n) {
                        buf.iter_mut().zip(chunk).for_each(|(b, gi)| *b += gi);
                    }
                });
            }
            Op::AddScalar(x) | Op::Reshape(x) => self.acc_elementwise(*x, g, |_, gi| gi),
            Op::Scale(x, c) => {
                let c = *c;
                self.acc_elementwise(*x, g, |_, gi| gi * c);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.v(*a).data().to_vec(), self.v(*b).data().to_vec());
                self.acc_elementwise(*a, g, |j, gi| gi * bv[j]);
                self.acc_elementwise(*b, g, |j, gi| gi * av[j]);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.v(*a).data().to_vec(), self.v(*b).data().to_vec());
                self.acc_elementwise(*a, g, |j, gi| gi / bv[j]);
                self.acc_elementwise(*b, g, |j, gi| -gi * av[j] / (bv[j] * bv[j]));
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, dim, inner) = split_axis(&shape, *axis);
                let scale = if matches!(op, Op::Mean { .. }) { 1.0 / dim as f64 } else { 1.0 };
                self.acc(*x, |buf| {
                    for o in 0..outer {
                        for d in 0..dim {
                            for ii in 0..inner {
                                buf[(o * dim + d) * inner + ii] += g[o * inner + ii] * scale;
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let g0 = g[0];
                self.acc(*x, |buf| buf.iter_mut().for_each(|b| *b += g0));
            }
            Op::MeanAll(x) => {
                let g0 = g[0] / self.v(*x).numel() as f64;
                self.acc(*x, |buf| buf.iter_mut().for_each(|b| *b += g0));
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let (outer, total, inner) = split_axis(&out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let d = self.shape(v)[*axis];
                    self.acc(v, |buf| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + d) * inner];
                            buf[o * d * inner..(o + 1) * d * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(b, s)| *b += s);
                        }
                    });
                    offset += d;
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x).to_vec();
                let (outer, dim, inner) = split_axis(&shape, *axis);
                let w = self.nodes[i].value.shape()[*axis];
                let start = *start;
                self.acc(*x, |buf| {
                    for o in 0..outer {
                        let dst = &mut buf[(o * dim + start) * inner..(o * dim + start + w) * inner];
                        dst.iter_mut()
                            .zip(&g[o * w * inner..(o + 1) * w * inner])
                            .for_each(|(b, s)| *b += s);
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.acc(*x, |buf| {
                    for a in 0..r {
                        for b in 0..c {
                            buf[a * c + b] += g[b * r + a];
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.v(*x).data().to_vec();
                self.acc_elementwise(*x, g, |j, gi| if xv[j] > 0.0 { gi } else { 0.0 });
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                let xv = self.v(*x).data().to_vec();
                self.acc_elementwise(*x, g, |j, gi| if xv[j] > 0.0 { gi } else { gi * slope });
            }
            Op::Gelu(x) => {
                let xv = self.v(*x).data().to_vec();
                self.acc_elementwise(*x, g, |j, gi| gi * gelu_grad(xv[j]));
            }
            Op::Log(x) => {
                let xv = self.v(*x).data().to_vec();
                self.acc_elementwise(*x, g, |j, gi| gi / xv[j]);
            }
            Op::Sqrt(x) => {
                let y = self.nodes[i].value.data().to_vec();
                self.acc_elementwise(*x, g, |j, gi| gi * 0.5 / y[j]);
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.data().to_vec();
                let shape = self.shape(*x).to_vec();
                let (outer, dim, inner) = split_axis(&shape, *axis);
                self.acc(*x, |buf| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |d: usize| (o * dim + d) * inner + ii;
                            let dot: f64 = (0..dim).map(|d| g[idx(d)] * y[idx(d)]).sum();
                            for d in 0..dim {
                                buf[idx(d)] += y[idx(d)] * (g[idx(d)] - dot);
                            }
                        }
                    }
                });
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let (c, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                let per = c / groups * t;
                let xv = self.v(*x).data().to_vec();
                let gv = self.v(*gamma).data().to_vec();
                let xhat: Vec<f64> = (0..c * t).map(|j| (xv[j] - mean[j / per]) * rstd[j / per]).collect();
                self.acc(*gamma, |buf| {
                    for j in 0..c * t {
                        buf[j / t] += g[j] * xhat[j];
                    }
                });
                self.acc(*beta, |buf| {
                    for j in 0..c * t {
                        buf[j / t] += g[j];
                    }
                });
                if self.requires_grad(*x) {
                    let dxhat: Vec<f64> = (0..c * t).map(|j| g[j] * gv[j / t]).collect();
                    let n = per as f64;
                    self.acc(*x, |buf| {
                        for gi in 0..*groups {
                            let range = gi * per..(gi + 1) * per;
                            let s1: f64 = dxhat[range.clone()].iter().sum();
                            let s2: f64 = range.clone().map(|j| dxhat[j] * xhat[j]).sum();
                            for j in range {
                                buf[j] += rstd[gi] / n * (n * dxhat[j] - s1 - xhat[j] * s2);
                            }
                        }
                    });
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                self.acc(*logits, |buf| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            buf[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}
