//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`]. Because a node can only
//! reference nodes created before it, walking the tape backwards visits the
//! graph in reverse topological order, once per node.

use super::kernels::{self, ConvGeom};
use super::tensor::{numel, Tensor};
use super::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output has the input's spatial size (odd kernels only).
    Same,
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` is either the same shape as `a` or a trailing-suffix shape that is
    /// broadcast over the leading axes.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Multiply by a one-element variable.
    ScaleBy(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    AvgPool2d { input: Var, k: usize },
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    Reshape(Var),
    SumOfSquares(Var),
    Sum(Var),
    RowNorms(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NnError {
    NnError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `(outer, axis_len, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
            let t = Tensor::new(sa.to_vec(), data)?;
            return Ok(self.push(t, Op::Add(a, b)));
        }
        if sb.len() < sa.len() && sa.ends_with(sb) && !sb.is_empty() {
            let inner = numel(sb);
            let bv = self.value(b).data();
            let data = self
                .value(a)
                .data()
                .chunks(inner)
                .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
                .collect();
            let t = Tensor::new(sa.to_vec(), data)?;
            return Ok(self.push(t, Op::Add(a, b)));
        }
        Err(shape_err("add", sa, sb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("sub", sa, sb));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NnError> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale_by", self.shape(a), self.shape(s)));
        }
        let k = self.value(s).item();
        let t = self.value(a).map(|v| v * k);
        Ok(self.push(t, Op::ScaleBy(a, s)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NnError> {
        let first = parts.first().ok_or(NnError::EmptyConcat)?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &base, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(shape_err("slice", &s, &[axis, start, len]));
        }
        let (outer, alen, inner) = split_axis(&s, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Slice { input, axis, start }))
    }

    /// Non-overlapping `k x k` mean pooling over `[B, C, H, W]`.
    pub fn avg_pool_2d(&mut self, input: Var, k: usize) -> Result<Var, NnError> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0 {
            return Err(shape_err("avg_pool_2d", &s, &[k, k]));
        }
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let src = self.value(input).data();
        let norm = 1.0 / (k * k) as f64;
        let mut data = vec![0.0; bc * oh * ow];
        for plane in 0..bc {
            for y in 0..h {
                for x in 0..w {
                    data[(plane * oh + y / k) * ow + x / k] += src[(plane * h + y) * w + x] * norm;
                }
            }
        }
        let t = Tensor::new(vec![s[0], s[1], oh, ow], data)?;
        Ok(self.push(t, Op::AvgPool2d { input, k }))
    }

    /// Stride-1 convolution of `[B, C_in, H, W]` with `[C_out, C_in, K, K]`
    /// plus an optional `[C_out]` bias.
    pub fn conv_2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: Padding) -> Result<Var, NnError> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] || sk[2] != sk[3] {
            return Err(shape_err("conv_2d", &si, &sk));
        }
        let k = sk[2];
        let pad = match padding {
            Padding::Same if k % 2 == 1 => (k - 1) / 2,
            Padding::Same => return Err(shape_err("conv_2d(same)", &si, &sk)),
            Padding::Valid => 0,
        };
        if si[2] + 2 * pad < k || si[3] + 2 * pad < k {
            return Err(shape_err("conv_2d", &si, &sk));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sk[0]] {
                return Err(shape_err("conv_2d(bias)", &sk, self.shape(b)));
            }
        }
        let geom = ConvGeom {
            batch: si[0],
            c_in: si[1],
            height: si[2],
            width: si[3],
            c_out: sk[0],
            kernel: k,
            pad,
        };
        let data = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(vec![geom.batch, geom.c_out, geom.out_h(), geom.out_w()], data)?;
        Ok(self.push(t, Op::Conv2d { input, kernel, bias, geom }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// `[B, ...] -> [B, prod(...)]`
    pub fn flatten(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.is_empty() {
            return Err(shape_err("flatten", &s, &[]));
        }
        self.reshape(a, &[s[0], numel(&s[1..])])
    }

    pub fn sum_of_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(v), Op::SumOfSquares(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    /// Euclidean norm of each row of `[N, D]`, giving `[N]`.
    pub fn row_norms(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err("row_norms", &s, &[]));
        }
        let data = self
            .value(a)
            .data()
            .chunks(s[1].max(1))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::new(vec![s[0]], data)?;
        Ok(self.push(t, Op::RowNorms(a)))
    }

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NnError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let da = kernels::gemm_bt(g.data(), bv.data(), m, n, k);
                let db = kernels::gemm_at(av.data(), g.data(), m, k, n);
                acc(*a, Tensor::new(vec![m, k], da)?);
                acc(*b, Tensor::new(vec![k, n], db)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                let sb = self.shape(*b);
                if sb == g.shape() {
                    acc(*b, g.clone());
                } else {
                    let inner = numel(sb);
                    let mut db = vec![0.0; inner];
                    for row in g.data().chunks(inner) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::new(sb.to_vec(), db)?);
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), da)?);
                acc(*b, Tensor::new(g.shape().to_vec(), db)?);
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::ScaleBy(a, s) => {
                let k = self.value(*s).item();
                let av = self.value(*a);
                let ds: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                acc(*a, g.map(|v| v * k));
                acc(*s, Tensor::new(self.shape(*s).to_vec(), vec![ds])?);
            }
            Op::Tanh(a) => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sigmoid(a) => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                let row_len = out.shape()[*axis] * inner;
                for p in parts {
                    let ps = self.shape(*p).to_vec();
                    let len = ps[*axis] * inner;
                    let mut d = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        let base = o * row_len + offset;
                        d.extend_from_slice(&g.data()[base..base + len]);
                    }
                    offset += len;
                    acc(*p, Tensor::new(ps, d)?);
                }
            }
            Op::Slice { input, axis, start } => {
                let s = self.shape(*input).to_vec();
                let (outer, alen, inner) = split_axis(&s, *axis);
                let len = out.shape()[*axis] * inner;
                let mut d = vec![0.0; numel(&s)];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    d[base..base + len].copy_from_slice(&g.data()[o * len..(o + 1) * len]);
                }
                acc(*input, Tensor::new(s, d)?);
            }
            Op::AvgPool2d { input, k } => {
                let s = self.shape(*input).to_vec();
                let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
                let (oh, ow) = (h / k, w / k);
                let norm = 1.0 / (k * k) as f64;
                let mut d = vec![0.0; numel(&s)];
                for plane in 0..bc {
                    for y in 0..h {
                        for x in 0..w {
                            d[(plane * h + y) * w + x] = g.data()[(plane * oh + y / k) * ow + x / k] * norm;
                        }
                    }
                }
                acc(*input, Tensor::new(s, d)?);
            }
            Op::Conv2d { input, kernel, bias, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g.data(),
                );
                acc(*input, Tensor::new(self.shape(*input).to_vec(), dx)?);
                acc(*kernel, Tensor::new(self.shape(*kernel).to_vec(), dw)?);
                if let Some(b) = bias {
                    acc(*b, Tensor::vector(db));
                }
            }
            Op::Reshape(a) => {
                acc(*a, g.clone().reshaped(self.shape(*a))?);
            }
            Op::SumOfSquares(a) => {
                let gv = g.item();
                acc(*a, self.value(*a).map(|x| 2.0 * x * gv));
            }
            Op::Sum(a) => {
                let gv = g.item();
                acc(*a, Tensor::full(self.shape(*a), gv));
            }
            Op::RowNorms(a) => {
                let x = self.value(*a);
                let cols = x.shape()[1].max(1);
                let mut d = vec![0.0; x.len()];
                for (r, (row, dr)) in x.data().chunks(cols).zip(d.chunks_mut(cols)).enumerate() {
                    let n = out.data()[r];
                    // zero subgradient at the origin
                    if n > 0.0 {
                        for (dv, xv) in dr.iter_mut().zip(row) {
                            *dv = g.data()[r] * xv / n;
                        }
                    }
                }
                acc(*a, Tensor::new(x.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when unreached.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}
