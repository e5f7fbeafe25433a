//! Wengert-list reverse-mode differentiation.
//!
//! Every differentiable op appends one node holding its output value and the
//! ids of its inputs. `backward` walks the list in reverse and accumulates
//! vector-Jacobian products into the input gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 2-D convolution over a `[channels, height, width]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        real: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var, Vec<usize>),
    L2NormalizeRows(Var, Vec<T>),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Upsample2x(Var),
    Reshape(Var),
    Transpose(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of executed operations. One tape per forward pass; tapes
/// are not shared across threads.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
    last_order: Vec<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
            last_order: Vec::new(),
        }
    }

    /// A tape on which no node requires a gradient.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.last_order.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Arc::new(t), false)
    }

    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Arc::new(t), true)
    }

    /// Binds a shared parameter without copying its storage.
    pub fn param(&mut self, t: &Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.push_leaf(Arc::clone(t), requires_grad)
    }

    fn push_leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: requires_grad && self.grad_enabled,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(Error::invalid(format!("{op}: expected a 2-D operand, got {s:?}"))),
        }
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap_or(&0);
        if self.value(bias).numel() != cols {
            return Err(self.mismatch("add_row", x, bias));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::lit(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    // ---- normalization and nonlinearities -------------------------------

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap_or(&0);
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.numel() / cols.max(1);
        let mut normalized = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(cols) {
            let (mean, istd) = tensor::row_moments(row, eps);
            inv_std.push(istd);
            for (j, &v) in row.iter().enumerate() {
                let n = (v - mean) * istd;
                normalized.push(n);
                out.push(n * g[j] + b[j]);
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = tensor::gelu(self.value(x));
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| (T::one() + (-v).exp()).recip());
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = tensor::softmax_lastdim(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let cols = *xv.shape().last().unwrap_or(&0);
        if cols == 0 {
            return Err(Error::invalid("log_softmax over an empty axis"));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(out, Op::LogSoftmax(x), &[x]))
    }

    /// Row-wise `x / max(||x||, 1e-12)`.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2(x, "l2_normalize_rows")?;
        let mut out = self.value(x).clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(cols) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(1e-12));
            norms.push(n);
            for v in row.iter_mut() {
                *v = *v / n;
            }
        }
        Ok(self.push(out, Op::L2NormalizeRows(x, norms), &[x]))
    }

    // ---- attention --------------------------------------------------------

    /// Multi-head scaled dot-product attention over `[tokens, dim]` inputs.
    ///
    /// Keys where `mask` is false are excluded from every softmax, which is
    /// the same as giving them a logit of negative infinity. Query rows where
    /// `mask` is false are not computed and come out as zeros.
    pub fn masked_attention(&mut self, q: Var, k: Var, v: Var, mask: &[bool], heads: usize) -> Result<Var> {
        let (t, d) = self.dims2(q, "attention")?;
        if self.shape(k) != [t, d] || self.shape(v) != [t, d] {
            return Err(self.mismatch("attention", q, k));
        }
        if mask.len() != t {
            return Err(Error::invalid(format!("attention mask has length {} for {t} tokens", mask.len())));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!("dim {d} is not divisible by {heads} heads")));
        }
        let real: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
        if real.is_empty() {
            return Err(Error::EmptyMask);
        }
        let r = real.len();
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![T::zero(); t * d];
        let mut probs = vec![T::zero(); heads * r * r];
        let mut qh = vec![T::zero(); r * dh];
        let mut kh = vec![T::zero(); r * dh];
        let mut vh = vec![T::zero(); r * dh];
        let mut oh = vec![T::zero(); r * dh];
        for h in 0..heads {
            gather_head(qv, &real, d, h * dh, dh, &mut qh);
            gather_head(kv, &real, d, h * dh, dh, &mut kh);
            gather_head(vv, &real, d, h * dh, dh, &mut vh);
            let p = &mut probs[h * r * r..(h + 1) * r * r];
            T::gemm(r, dh, r, scale, &qh, false, &kh, true, T::zero(), p);
            for row in p.chunks_mut(r) {
                tensor::softmax_in_place(row);
            }
            T::gemm(r, r, dh, T::one(), p, false, &vh, false, T::zero(), &mut oh);
            for (ri, &ti) in real.iter().enumerate() {
                out[ti * d + h * dh..ti * d + (h + 1) * dh].copy_from_slice(&oh[ri * dh..(ri + 1) * dh]);
            }
        }
        let out = Tensor::new(vec![t, d], out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                real,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Attention weights recorded by a [`Tape::masked_attention`] node:
    /// `(heads, real token indices, weights[heads][real][real])`.
    pub fn attention_weights(&self, v: Var) -> Option<(usize, &[usize], &[T])> {
        match &self.nodes[v.0].op {
            Op::Attention { heads, real, probs, .. } => Some((*heads, real, probs)),
            _ => None,
        }
    }

    // ---- row plumbing -------------------------------------------------------

    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(table, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("gather_rows: row {bad} of a {rows}-row table")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(&tv[i * cols..(i + 1) * cols]);
        }
        let out = Tensor::new(vec![index.len(), cols], out)?;
        Ok(self.push(out, Op::GatherRows(table, index.to_vec()), &[table]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let (_, cols) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "slice_rows")?;
        if start + len > rows {
            return Err(Error::invalid(format!("slice_rows: rows {start}..{} of {rows}", start + len)));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(vec![len, cols], data)?;
        Ok(self.push(out, Op::SliceRows(x, start), &[x]))
    }

    /// Mean of the selected rows as a `[1, cols]` tensor.
    pub fn mean_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.dims2(x, "mean_rows")?;
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::invalid("mean_rows: empty or out-of-range row selection"));
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); cols];
        for &r in rows {
            for (o, &v) in out.iter_mut().zip(&xv[r * cols..(r + 1) * cols]) {
                *o += v;
            }
        }
        let inv = T::lit(1.0 / rows.len() as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new(vec![1, cols], out)?;
        Ok(self.push(out, Op::MeanRows(x, rows.to_vec()), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Swaps the two axes of a 2-D operand.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let out = Tensor::new(vec![c, r], transpose_data(self.value(x).data(), r, c))?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    // ---- convolution --------------------------------------------------------

    /// 2-D convolution of a `[C, H, W]` input with `[O, C, k, k]` weights and
    /// an `[O]` bias, zero padded.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, wd) = match self.shape(x) {
            &[c, h, w] => (c, h, w),
            _ => return Err(self.mismatch("conv2d", x, w)),
        };
        let (o, kernel) = match self.shape(w) {
            &[o, ci, k1, k2] if ci == c && k1 == k2 => (o, k1),
            _ => return Err(self.mismatch("conv2d", x, w)),
        };
        if self.value(b).numel() != o || stride == 0 || h + 2 * pad < kernel || wd + 2 * pad < kernel {
            return Err(self.mismatch("conv2d", w, b));
        }
        let geom = ConvGeom {
            in_channels: c,
            out_channels: o,
            height: h,
            width: wd,
            kernel,
            stride,
            pad,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let hw = geom.out_height() * geom.out_width();
        let mut out = vec![T::zero(); o * hw];
        for (oc, row) in out.chunks_mut(hw).enumerate() {
            row.fill(self.value(b).data()[oc]);
        }
        T::gemm(o, c * kernel * kernel, hw, T::one(), self.value(w).data(), false, &cols, false, T::one(), &mut out);
        let out = Tensor::new(vec![o, geom.out_height(), geom.out_width()], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom, cols }, &[x, w, b]))
    }

    /// Nearest-neighbour 2x upsampling of a `[C, H, W]` tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            &[c, h, w] => (c, h, w),
            s => return Err(Error::invalid(format!("upsample2x: expected [C, H, W], got {s:?}"))),
        };
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::new(vec![c, 2 * h, 2 * w], out)?;
        Ok(self.push(out, Op::Upsample2x(x), &[x]))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Afterwards [`Tape::grad`] returns
    /// the accumulated gradient of every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.last_order.clear();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !matches!(self.nodes[i].op, Op::Leaf) {
                self.last_order.push(i);
                self.backward_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Node indices whose backward rule ran during the last reverse pass,
    /// in the order they ran.
    pub fn last_backward_order(&self) -> &[usize] {
        &self.last_order
    }

    /// Gradient of `v` after [`Tape::backward`]; zeros when `v` requires a
    /// gradient but was unreachable, `None` when it does not require one.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.shape(v).to_vec();
        Some(match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        })
    }

    fn acc(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backward_node(&mut self, i: usize, g: &[T]) {
        // The op is moved out so input gradients can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out = Arc::clone(&self.nodes[i].value);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = out.dims2().1;
                let (av, bv) = (Arc::clone(&self.nodes[a.0].value), Arc::clone(&self.nodes[b.0].value));
                if let Some(ga) = self.acc(*a) {
                    T::gemm(m, n, k, T::one(), g, false, bv.data(), true, T::one(), ga);
                }
                if let Some(gb) = self.acc(*b) {
                    T::gemm(k, m, n, T::one(), av.data(), true, g, false, T::one(), gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(*b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (Arc::clone(&self.nodes[a.0].value), Arc::clone(&self.nodes[b.0].value));
                if let Some(ga) = self.acc(*a) {
                    for ((x, &gy), &bb) in ga.iter_mut().zip(g).zip(bv.data()) {
                        *x += gy * bb;
                    }
                }
                if let Some(gb) = self.acc(*b) {
                    for ((x, &gy), &aa) in gb.iter_mut().zip(g).zip(av.data()) {
                        *x += gy * aa;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.acc(*bias) {
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = self.acc(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *f);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(*x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(*x) {
                    let s = g[0] / T::lit(gx.len() as f64);
                    gx.iter_mut().for_each(|a| *a += s);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let cols = self.value(*gamma).numel();
                let gam = Arc::clone(&self.nodes[gamma.0].value);
                if let Some(gg) = self.acc(*gamma) {
                    for (grow, nrow) in g.chunks(cols).zip(normalized.chunks(cols)) {
                        for j in 0..cols {
                            gg[j] += grow[j] * nrow[j];
                        }
                    }
                }
                if let Some(gb) = self.acc(*beta) {
                    for grow in g.chunks(cols) {
                        add_into(gb, grow);
                    }
                }
                if let Some(gx) = self.acc(*x) {
                    let n = T::lit(cols as f64);
                    for (r, ((gxr, grow), nrow)) in gx
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(normalized.chunks(cols))
                        .enumerate()
                    {
                        // dxhat = g * gamma; dx = istd/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..cols {
                            let d = grow[j] * gam.data()[j];
                            s1 += d;
                            s2 += d * nrow[j];
                        }
                        let k = inv_std[r] / n;
                        for j in 0..cols {
                            let d = grow[j] * gam.data()[j];
                            gxr[j] += k * (n * d - s1 - nrow[j] * s2);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = Arc::clone(&self.nodes[x.0].value);
                if let Some(gx) = self.acc(*x) {
                    for ((a, &gy), &xx) in gx.iter_mut().zip(g).zip(xv.data()) {
                        *a += gy * tensor::gelu_grad_scalar(xx);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = Arc::clone(&self.nodes[x.0].value);
                if let Some(gx) = self.acc(*x) {
                    for ((a, &gy), &xx) in gx.iter_mut().zip(g).zip(xv.data()) {
                        if xx > T::zero() {
                            *a += gy;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.acc(*x) {
                    for ((a, &gy), &s) in gx.iter_mut().zip(g).zip(out.data()) {
                        *a += gy * s * (T::one() - s);
                    }
                }
            }
            Op::Softmax(x) => {
                let cols = *out.shape().last().unwrap();
                if let Some(gx) = self.acc(*x) {
                    for ((gxr, grow), srow) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let dot: T = grow.iter().zip(srow).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            gxr[j] += srow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let cols = *out.shape().last().unwrap();
                if let Some(gx) = self.acc(*x) {
                    for ((gxr, grow), lrow) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let total: T = grow.iter().copied().sum();
                        for j in 0..cols {
                            gxr[j] += grow[j] - lrow[j].exp() * total;
                        }
                    }
                }
            }
            Op::L2NormalizeRows(x, norms) => {
                let cols = out.dims2().1;
                if let Some(gx) = self.acc(*x) {
                    for (r, ((gxr, grow), yrow)) in
                        gx.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)).enumerate()
                    {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            gxr[j] += (grow[j] - yrow[j] * dot) / norms[r];
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                real,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, real, probs, g),
            Op::GatherRows(table, index) => {
                if let Some(gt) = self.acc(*table) {
                    let cols = g.len() / index.len().max(1);
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut gt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(gp) = self.acc(p) {
                        add_into(gp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceRows(x, start) => {
                let cols = out.dims2().1;
                if let Some(gx) = self.acc(*x) {
                    add_into(&mut gx[start * cols..start * cols + g.len()], g);
                }
            }
            Op::MeanRows(x, rows) => {
                let cols = g.len();
                let inv = T::lit(1.0 / rows.len() as f64);
                if let Some(gx) = self.acc(*x) {
                    for &r in rows {
                        for (a, &b) in gx[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                            *a += b * inv;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, g);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2();
                let gt = transpose_data(g, c, r);
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, &gt);
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let hw = geom.out_height() * geom.out_width();
                let ckk = geom.in_channels * geom.kernel * geom.kernel;
                let o = geom.out_channels;
                if let Some(gb) = self.acc(*b) {
                    for (oc, row) in g.chunks(hw).enumerate() {
                        gb[oc] += row.iter().copied().sum::<T>();
                    }
                }
                if let Some(gw) = self.acc(*w) {
                    T::gemm(o, hw, ckk, T::one(), g, false, cols, true, T::one(), gw);
                }
                let wv = Arc::clone(&self.nodes[w.0].value);
                if let Some(gx) = self.acc(*x) {
                    let mut dcols = vec![T::zero(); ckk * hw];
                    T::gemm(ckk, o, hw, T::one(), wv.data(), true, g, false, T::zero(), &mut dcols);
                    col2im_add(&dcols, geom, gx);
                }
            }
            Op::Upsample2x(x) => {
                let (c, h2, w2) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                let (h, w) = (h2 / 2, w2 / 2);
                if let Some(gx) = self.acc(*x) {
                    for ch in 0..c {
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * h2 + y) * w2 + xx];
                            }
                        }
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(&mut self, q: Var, k: Var, v: Var, heads: usize, real: &[usize], probs: &[T], g: &[T]) {
        let (_, d) = self.value(q).dims2();
        let r = real.len();
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (
            Arc::clone(&self.nodes[q.0].value),
            Arc::clone(&self.nodes[k.0].value),
            Arc::clone(&self.nodes[v.0].value),
        );
        let mut qh = vec![T::zero(); r * dh];
        let mut kh = vec![T::zero(); r * dh];
        let mut vh = vec![T::zero(); r * dh];
        let mut goh = vec![T::zero(); r * dh];
        let mut dp = vec![T::zero(); r * r];
        let mut buf = vec![T::zero(); r * dh];
        for h in 0..heads {
            let p = &probs[h * r * r..(h + 1) * r * r];
            gather_head(qv.data(), real, d, h * dh, dh, &mut qh);
            gather_head(kv.data(), real, d, h * dh, dh, &mut kh);
            gather_head(vv.data(), real, d, h * dh, dh, &mut vh);
            gather_head(g, real, d, h * dh, dh, &mut goh);
            if let Some(gv) = self.acc(v) {
                T::gemm(r, r, dh, T::one(), p, true, &goh, false, T::zero(), &mut buf);
                scatter_head_add(&buf, real, d, h * dh, dh, gv);
            }
            // dS = P * (dP - rowsum(dP * P)), with dP = dO V^T
            T::gemm(r, dh, r, T::one(), &goh, false, &vh, true, T::zero(), &mut dp);
            for (dprow, prow) in dp.chunks_mut(r).zip(p.chunks(r)) {
                let dot: T = dprow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (a, &b) in dprow.iter_mut().zip(prow) {
                    *a = b * (*a - dot);
                }
            }
            if let Some(gq) = self.acc(q) {
                T::gemm(r, r, dh, scale, &dp, false, &kh, false, T::zero(), &mut buf);
                scatter_head_add(&buf, real, d, h * dh, dh, gq);
            }
            if let Some(gk) = self.acc(k) {
                T::gemm(r, r, dh, scale, &dp, true, &qh, false, T::zero(), &mut buf);
                scatter_head_add(&buf, real, d, h * dh, dh, gk);
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn gather_head<T: Scalar>(src: &[T], rows: &[usize], d: usize, off: usize, dh: usize, dst: &mut [T]) {
    for (ri, &ti) in rows.iter().enumerate() {
        dst[ri * dh..(ri + 1) * dh].copy_from_slice(&src[ti * d + off..ti * d + off + dh]);
    }
}

fn scatter_head_add<T: Scalar>(src: &[T], rows: &[usize], d: usize, off: usize, dh: usize, dst: &mut [T]) {
    for (ri, &ti) in rows.iter().enumerate() {
        add_into(&mut dst[ti * d + off..ti * d + off + dh], &src[ri * dh..(ri + 1) * dh]);
    }
}

/// Unfolds a `[C, H, W]` input into `[C*k*k, Ho*Wo]` columns.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let mut cols = vec![T::zero(); g.in_channels * k * k * ho * wo];
    for c in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[oy * wo + ox] = x[(c * g.height + iy as usize) * g.width + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dx[(c * g.height + iy as usize) * g.width + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn transpose_data<T: Copy>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..cols {
        out.extend((0..rows).map(|i| x[i * cols + j]));
    }
    out
}
