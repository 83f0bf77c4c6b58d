//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every op evaluates eagerly, appends one node holding its value, and
//! records the input handles it needs for the backward sweep. Nodes are
//! only ever appended, so the node order is already a topological order
//! and `backward` is a single reverse pass over it.

use super::tensor::{axis_split, numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op discriminant, used for fault injection and introspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Tanh,
    Sigmoid,
    Relu,
    Ln,
    Clamp,
    Softmax,
    LogSoftmax,
    Concat,
    Sum,
    Mean,
    Max,
    SumAll,
    Reshape,
    Transpose,
    Slice,
    IndexSelect,
    Pick,
    Broadcast,
    Im2col,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<OpKind> {
        use OpKind::*;
        let all = [
            Leaf, MatMul, Add, Sub, Mul, Scale, AddScalar, Tanh, Sigmoid, Relu, Ln, Clamp,
            Softmax, LogSoftmax, Concat, Sum, Mean, Max, SumAll, Reshape, Transpose, Slice,
            IndexSelect, Pick, Broadcast, Im2col,
        ];
        all.into_iter()
            .find(|k| format!("{k:?}").eq_ignore_ascii_case(name))
    }
}

/// Geometry of a square-kernel convolution over a `[h, w, c]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
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

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Calls `f(out_index, in_index)` for every non-padding patch entry.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (ho, wo, k, c) = (self.out_height(), self.out_width(), self.kernel, self.channels);
        let patch = self.patch_len();
        for oy in 0..ho {
            for ox in 0..wo {
                let row = (oy * wo + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.width as isize {
                            continue;
                        }
                        let src = (iy as usize * self.width + ix as usize) * c;
                        let dst = row + (ky * k + kx) * c;
                        for ch in 0..c {
                            f(dst + ch, src + ch);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Max { x: Var, axis: usize, argmax: Vec<usize> },
    SumAll(Var),
    Reshape(Var),
    Transpose(Var),
    Slice { x: Var, axis: usize, start: usize },
    IndexSelect { x: Var, axis: usize, indices: Vec<usize> },
    Pick { x: Var, indices: Vec<usize> },
    Broadcast(Var),
    Im2col { x: Var, geom: ConvGeom },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Relu(..) => OpKind::Relu,
            Op::Ln(..) => OpKind::Ln,
            Op::Clamp { .. } => OpKind::Clamp,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::Concat { .. } => OpKind::Concat,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Max { .. } => OpKind::Max,
            Op::SumAll(..) => OpKind::SumAll,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Slice { .. } => OpKind::Slice,
            Op::IndexSelect { .. } => OpKind::IndexSelect,
            Op::Pick { .. } => OpKind::Pick,
            Op::Broadcast(..) => OpKind::Broadcast,
            Op::Im2col { .. } => OpKind::Im2col,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the differentiated output with respect to `v`; zeros if
    /// `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
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

    /// Negative-control hook: scales every gradient leaving ops of `kind`
    /// by `factor` during `backward`.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push_op(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        let rg = self.needs(inputs);
        let value = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push(value, op, rg)
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

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref s => Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 0],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push_op(out, vec![m, n], Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(data, shape, node, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(data, shape, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("ln of non-positive value"));
        }
        Ok(self.unary(x, f64::ln, Op::Ln(x)))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping was active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, None)
    }

    /// Softmax where entries with `keep[k] == false` along `axis` are
    /// treated as `-inf` logits and come out exactly zero.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, keep: &[bool]) -> Result<Var> {
        self.softmax_impl(x, axis, Some(keep))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, keep: Option<&[bool]>) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        if let Some(keep) = keep {
            if keep.len() != n || !keep.iter().any(|&k| k) {
                return Err(Error::invalid(format!(
                    "softmax mask of length {} for extent {n} must keep at least one entry",
                    keep.len()
                )));
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let live = |k: usize| keep.is_none_or(|m| m[k]);
                let mx = (0..n)
                    .filter(|&k| live(k))
                    .map(|k| src[at(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in (0..n).filter(|&k| live(k)) {
                    let e = (src[at(k)] - mx).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[at(k)] /= z;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(out, shape, Op::Softmax { x, axis }, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mx = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + (0..n).map(|k| (src[at(k)] - mx).exp()).sum::<f64>().ln();
                for k in 0..n {
                    out[at(k)] = src[at(k)] - lse;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(out, shape, Op::LogSoftmax { x, axis }, &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let base = self.shape(first).to_vec();
        axis_split(&base, axis)?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis)?;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        Ok(self.push_op(
            out,
            shape,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    fn reduce(&mut self, x: Var, axis: usize, f: impl Fn(&[f64], usize, usize, usize) -> f64) -> Result<(Vec<f64>, Vec<usize>)> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                out.push(f(src, o, i, n));
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = 1;
        Ok((out, shape))
    }

    /// Sum along `axis`; the axis is kept with extent 1.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let inner = axis_split(self.shape(x), axis)?.2;
        let (out, shape) = self.reduce(x, axis, |s, o, i, n| {
            (0..n).map(|k| s[(o * n + k) * inner + i]).sum()
        })?;
        Ok(self.push_op(out, shape, Op::Sum { x, axis }, &[x]))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let inner = axis_split(self.shape(x), axis)?.2;
        let (out, shape) = self.reduce(x, axis, |s, o, i, n| {
            (0..n).map(|k| s[(o * n + k) * inner + i]).sum::<f64>() / n as f64
        })?;
        Ok(self.push_op(out, shape, Op::Mean { x, axis }, &[x]))
    }

    /// Max along `axis`; on ties the lowest index wins and alone receives
    /// the gradient.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for k in 1..n {
                    if src[(o * n + k) * inner + i] > src[(o * n + best) * inner + i] {
                        best = k;
                    }
                }
                argmax.push(best);
                out.push(src[(o * n + best) * inner + i]);
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = 1;
        Ok(self.push_op(out, shape, Op::Max { x, axis, argmax }, &[x]))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_op(vec![s], vec![1], Op::SumAll(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push_op(out, vec![n, m], Op::Transpose(x), &[x]))
    }

    /// Entries `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!(
                "slice {start}..{} out of range for extent {n}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = len;
        Ok(self.push_op(out, shape, Op::Slice { x, axis, start }, &[x]))
    }

    /// Gathers entries along `axis` in the order given by `indices`
    /// (embedding lookup when `axis == 0`).
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        if indices.is_empty() {
            return Err(Error::invalid("index_select with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&k| k >= n) {
            return Err(Error::invalid(format!("index {bad} out of range for extent {n}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &k in indices {
                out.extend_from_slice(&src[(o * n + k) * inner..(o * n + k + 1) * inner]);
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = indices.len();
        Ok(self.push_op(
            out,
            shape,
            Op::IndexSelect {
                x,
                axis,
                indices: indices.to_vec(),
            },
            &[x],
        ))
    }

    /// For a `[n, m]` input, picks column `indices[i]` of row `i`, giving `[n, 1]`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (n, m) = self.dims2("pick", x)?;
        if indices.len() != n || indices.iter().any(|&k| k >= m) {
            return Err(Error::invalid(format!(
                "pick needs {n} indices below {m}, got {indices:?}"
            )));
        }
        let src = self.value(x).data();
        let out = indices.iter().enumerate().map(|(i, &k)| src[i * m + k]).collect();
        Ok(self.push_op(
            out,
            vec![n, 1],
            Op::Pick {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        ))
    }

    /// Repeats along every axis where the input extent is 1.
    pub fn broadcast(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let from = self.shape(x).to_vec();
        let ok = from.len() == shape.len()
            && from.iter().zip(&shape).all(|(&a, &b)| a == b || a == 1)
            && !shape.contains(&0);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: from,
                rhs: shape,
            });
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; numel(&shape)];
        for_each_broadcast(&shape, &from, |o, i| out[o] = src[i]);
        Ok(self.push_op(out, shape, Op::Broadcast(x), &[x]))
    }

    /// Unfolds a `[h, w, c]` input into `[out_h * out_w, k * k * c]` patches.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (height, width, channels) = match *self.shape(x) {
            [h, w, c] => (h, w, c),
            ref s => {
                return Err(Error::ShapeMismatch {
                    op: "im2col",
                    lhs: s.to_vec(),
                    rhs: vec![0, 0, 0],
                })
            }
        };
        if stride == 0 || kernel == 0 || height + 2 * pad < kernel || width + 2 * pad < kernel {
            return Err(Error::invalid("im2col geometry does not fit the input"));
        }
        let geom = ConvGeom {
            height,
            width,
            channels,
            kernel,
            stride,
            pad,
        };
        let rows = geom.out_height() * geom.out_width();
        let mut out = vec![0.0; rows * geom.patch_len()];
        let src = self.value(x).data();
        geom.for_each_tap(|o, i| out[o] = src[i]);
        Ok(self.push_op(out, vec![rows, geom.patch_len()], Op::Im2col { x, geom }, &[x]))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(mut dy) = grads[idx].take() else {
                continue;
            };
            if let Some((kind, factor)) = self.fault {
                if node.op.kind() == kind {
                    dy.iter_mut().for_each(|g| *g *= factor);
                }
            }
            self.backprop_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes[..=out.0]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn backprop_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                self.acc_into(grads, a, |da| matmul_nt_acc(dy, self.value(b).data(), m, n, k, da));
                self.acc_into(grads, b, |db| matmul_tn_acc(self.value(a).data(), dy, m, k, n, db));
            }
            &Op::Add(a, b) => {
                self.acc_into(grads, a, |dx| dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g));
                self.acc_into(grads, b, |dx| dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g));
            }
            &Op::Sub(a, b) => {
                self.acc_into(grads, a, |dx| dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g));
                self.acc_into(grads, b, |dx| dx.iter_mut().zip(dy).for_each(|(d, g)| *d -= g));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.acc_into(grads, a, |dx| zip_acc(dx, dy, vb, |g, v| g * v));
                self.acc_into(grads, b, |dx| zip_acc(dx, dy, va, |g, v| g * v));
            }
            &Op::Scale(x, c) => self.acc_into(grads, x, |dx| zip_acc(dx, dy, dy, |g, _| g * c)),
            &Op::AddScalar(x) | &Op::Reshape(x) => self.acc_into(grads, x, |dx| dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g)),
            &Op::Tanh(x) => {
                self.acc_into(grads, x, |dx| zip_acc(dx, dy, y, |g, t| g * (1.0 - t * t)))
            }
            &Op::Sigmoid(x) => {
                self.acc_into(grads, x, |dx| zip_acc(dx, dy, y, |g, s| g * s * (1.0 - s)))
            }
            &Op::Relu(x) => {
                let v = self.value(x).data();
                self.acc(grads, x, || {
                    dy.iter().zip(v).map(|(g, &u)| if u > 0.0 { *g } else { 0.0 }).collect()
                })
            }
            &Op::Ln(x) => {
                let v = self.value(x).data();
                self.acc(grads, x, || dy.iter().zip(v).map(|(g, u)| g / u).collect())
            }
            &Op::Clamp { x, lo, hi } => {
                let v = self.value(x).data();
                self.acc(grads, x, || {
                    dy.iter()
                        .zip(v)
                        .map(|(g, &u)| if u >= lo && u <= hi { *g } else { 0.0 })
                        .collect()
                })
            }
            &Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(node.value.shape(), axis).expect("axis");
                self.acc(grads, x, || {
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let dot: f64 = (0..n).map(|k| dy[at(k)] * y[at(k)]).sum();
                            for k in 0..n {
                                dx[at(k)] = y[at(k)] * (dy[at(k)] - dot);
                            }
                        }
                    }
                    dx
                })
            }
            &Op::LogSoftmax { x, axis } => {
                let (outer, n, inner) = axis_split(node.value.shape(), axis).expect("axis");
                self.acc(grads, x, || {
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let total: f64 = (0..n).map(|k| dy[at(k)]).sum();
                            for k in 0..n {
                                dx[at(k)] = dy[at(k)] - y[at(k)].exp() * total;
                            }
                        }
                    }
                    dx
                })
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis).expect("axis");
                let mut offset = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    self.acc_into(grads, v, |dx| {
                        for o in 0..outer {
                            let src = &dy[(o * total + offset) * inner..][..n * inner];
                            let dst = &mut dx[o * n * inner..(o + 1) * n * inner];
                            dst.iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    });
                    offset += n;
                }
            }
            &Op::Sum { x, axis } | &Op::Mean { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(x), axis).expect("axis");
                let c = if matches!(node.op, Op::Mean { .. }) { 1.0 / n as f64 } else { 1.0 };
                self.acc(grads, x, || {
                    let mut dx = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                dx[(o * n + k) * inner + i] = dy[o * inner + i] * c;
                            }
                        }
                    }
                    dx
                })
            }
            Op::Max { x, axis, argmax } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis).expect("axis");
                self.acc_into(grads, *x, |dx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let j = o * inner + i;
                            dx[(o * n + argmax[j]) * inner + i] += dy[j];
                        }
                    }
                })
            }
            &Op::SumAll(x) => self.acc(grads, x, || vec![dy[0]; self.value(x).len()]),
            &Op::Transpose(x) => {
                let (m, n) = (self.shape(x)[0], self.shape(x)[1]);
                self.acc(grads, x, || {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = dy[j * m + i];
                        }
                    }
                    dx
                })
            }
            &Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(x), axis).expect("axis");
                let len = node.value.shape()[axis];
                self.acc_into(grads, x, |dx| {
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        let src = &dy[o * len * inner..(o + 1) * len * inner];
                        dx[dst..dst + len * inner].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                    }
                })
            }
            Op::IndexSelect { x, axis, indices } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis).expect("axis");
                let len = indices.len();
                self.acc_into(grads, *x, |dx| {
                    for o in 0..outer {
                        for (j, &k) in indices.iter().enumerate() {
                            for i in 0..inner {
                                dx[(o * n + k) * inner + i] += dy[(o * len + j) * inner + i];
                            }
                        }
                    }
                })
            }
            Op::Pick { x, indices } => {
                let m = self.shape(*x)[1];
                self.acc_into(grads, *x, |dx| {
                    for (i, &k) in indices.iter().enumerate() {
                        dx[i * m + k] += dy[i];
                    }
                })
            }
            &Op::Broadcast(x) => {
                let from = self.shape(x).to_vec();
                let to = node.value.shape();
                self.acc_into(grads, x, |dx| for_each_broadcast(to, &from, |o, i| dx[i] += dy[o]))
            }
            &Op::Im2col { x, geom } => {
                self.acc_into(grads, x, |dx| geom.for_each_tap(|o, i| dx[i] += dy[o]))
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce() -> Vec<f64>) {
        if self.nodes[v.0].requires_grad {
            accumulate(grads, v, f());
        }
    }
}

impl Tape {
    /// Adds into `v`'s gradient buffer in place, creating it zeroed on first
    /// use. Sparse backward rules use this to avoid a dense temporary.
    fn acc_into(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.nodes[v.0].requires_grad {
            let len = self.value(v).len();
            f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
        }
    }
}

/// `dx[i] += f(dy[i], v[i])`.
fn zip_acc(dx: &mut [f64], dy: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((d, &g), &u) in dx.iter_mut().zip(dy).zip(v) {
        *d += f(g, u);
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Visits every output offset `o` of a broadcast with its source offset `i`,
/// in increasing `o`. Rank-2 shapes skip the per-element index arithmetic.
fn for_each_broadcast(to: &[usize], from: &[usize], mut f: impl FnMut(usize, usize)) {
    if let ([rows, cols], [fr, fc]) = (to, from) {
        for r in 0..*rows {
            let base = if *fr == 1 { 0 } else { r * fc };
            for c in 0..*cols {
                f(r * cols + c, base + if *fc == 1 { 0 } else { c });
            }
        }
        return;
    }
    for o in 0..numel(to) {
        f(o, broadcast_source(o, to, from));
    }
}

fn broadcast_source(mut o: usize, to: &[usize], from: &[usize]) -> usize {
    let mut src = 0;
    let mut stride = 1;
    for d in (0..to.len()).rev() {
        let idx = o % to[d];
        o /= to[d];
        if from[d] != 1 {
            src += idx * stride;
        }
        stride *= from[d];
    }
    src
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[m, k] x [k, n]`.
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * bv;
            }
        }
    }
    out
}

/// Adds `[m, n] x [k, n]^T` into `out`, shaped `[m, k]`.
fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(ar, &b[p * n..(p + 1) * n]);
        }
    }
}

/// Four independent partial sums so the loop vectorizes; the order is fixed,
/// so results are deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.split_at(a.len() / 4 * 4);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adds `[m, k]^T x [m, n]` into `out`, shaped `[k, n]`.
fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o += x * bv;
            }
        }
    }
}
