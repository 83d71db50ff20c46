use super::tensor::{numel, Scalar, Tensor};
use super::GradError;

type Result<T> = std::result::Result<T, GradError>;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise derivative callback: `(input, output) -> d output / d input`.
pub type Derivative<T> = fn(T, T) -> T;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Map { input: Var, deriv: Derivative<T> },
    Softmax { input: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Sum { input: Var, axis: usize },
    Mean { input: Var, axis: usize },
    SumAll(Var),
    L2Normalize { input: Var, axis: usize, eps: T },
    Unfold { input: Var, kernel: usize, stride: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Dynamic tape for one forward pass. Not shared across threads; build one
/// graph per pass (and per thread).
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradient buffer for `v`, zero-initialised on first use; `None` when `v`
/// does not require a gradient.
fn grad_buf<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(GradError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_axis(&self, op: &'static str, v: Var, axis: usize) -> Result<()> {
        let shape = self.shape(v);
        if axis >= shape.len() {
            return Err(GradError::InvalidAxis {
                op,
                axis,
                shape: shape.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcastable(sa, sb) {
            return Err(GradError::ShapeMismatch {
                op: name,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let nb = bv.numel();
        let bd = bv.data();
        let data = av.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Elementwise `a + b`; `b` may match the trailing dimensions of `a` and
    /// is then broadcast over the leading ones.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let v = self.map_value(x, |v| v * c);
        self.push("scale", v, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let v = self.map_value(x, |v| v + c);
        self.push("add_scalar", v, Op::AddScalar(x), &[x])
    }

    fn map_value(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        Tensor::new(xv.shape().to_vec(), data).expect("same shape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.map_value(x, sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.map_value(x, |v| v.tanh());
        self.push("tanh", v, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.map_value(x, |v| v.max(T::zero()));
        self.push("relu", v, Op::Relu(x), &[x])
    }

    /// Elementwise function with a caller-supplied derivative
    /// `deriv(input, output)`.
    pub fn map(&mut self, x: Var, f: fn(T) -> T, deriv: Derivative<T>) -> Result<Var> {
        let v = self.map_value(x, f);
        self.push("map", v, Op::Map { input: x, deriv }, &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| src[idx(a)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for a in 0..len {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    out[idx(a)] = out[idx(a)] / total;
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax { input: x, axis }, &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(GradError::InvalidArgument {
                op: "concat",
                reason: "no inputs".into(),
                shape: Vec::new(),
            });
        };
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(GradError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, out)?;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        self.push("concat", value, op, inputs)
    }

    /// `len` entries of `x` along `axis`, starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let xv = self.value(x);
        let (outer, full, inner) = split_axis(xv.shape(), axis);
        if start + len > full || len == 0 {
            return Err(GradError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{} on axis {axis}", start + len),
                shape: xv.shape().to_vec(),
            });
        }
        let src = xv.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        self.push("slice", value, Op::Slice { input: x, axis, start }, &[x])
    }

    /// Swap the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(GradError::InvalidArgument {
                op: "transpose",
                reason: "expected a matrix".into(),
                shape: xv.shape().to_vec(),
            });
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let src = xv.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if numel(&shape) != xv.numel() {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                left: xv.shape().to_vec(),
                right: shape,
            });
        }
        let value = xv.clone().with_shape(shape);
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    fn reduce(&self, x: Var, axis: usize, scale: T) -> Tensor<T> {
        let xv = self.value(x);
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &src[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if scale != T::one() {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        Tensor::new(shape, out).expect("reduced shape")
    }

    /// Sum over `axis`, removing it from the shape.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum", x, axis)?;
        let v = self.reduce(x, axis, T::one());
        self.push("sum", v, Op::Sum { input: x, axis }, &[x])
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean", x, axis)?;
        let len = self.shape(x)[axis];
        let v = self.reduce(x, axis, T::one() / T::of(len as f64));
        self.push("mean", v, Op::Mean { input: x, axis }, &[x])
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum();
        self.push("sum_all", Tensor::scalar(total), Op::SumAll(x), &[x])
    }

    /// `x / sqrt(sum(x^2, axis) + eps)`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: T) -> Result<Var> {
        self.check_axis("l2_normalize", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let sq: T = (0..len).map(|a| src[idx(a)] * src[idx(a)]).sum();
                let norm = (sq + eps).sqrt();
                for a in 0..len {
                    out[idx(a)] = src[idx(a)] / norm;
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("l2_normalize", value, Op::L2Normalize { input: x, axis, eps }, &[x])
    }

    /// Cosine similarity along the last axis (eps 1e-12 inside each norm).
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa.is_empty() {
            return Err(GradError::ShapeMismatch {
                op: "cosine_similarity",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let axis = sa.len() - 1;
        let eps = T::of(1e-12);
        let na = self.l2_normalize(a, axis, eps)?;
        let nb = self.l2_normalize(b, axis, eps)?;
        let prod = self.mul(na, nb)?;
        self.sum(prod, axis)
    }

    /// Sliding windows over the rows of a `[T, D]` matrix: row `t` of the
    /// `[T', kernel * D]` result is rows `stride*t .. stride*t + kernel`
    /// flattened, with `T' = (T - kernel) / stride + 1`.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || kernel == 0 || stride == 0 || xv.shape()[0] < kernel {
            return Err(GradError::InvalidArgument {
                op: "unfold",
                reason: format!("kernel {kernel}, stride {stride}"),
                shape: xv.shape().to_vec(),
            });
        }
        let (t, d) = (xv.shape()[0], xv.shape()[1]);
        let frames = (t - kernel) / stride + 1;
        let src = xv.data();
        let mut out = Vec::with_capacity(frames * kernel * d);
        for f in 0..frames {
            let from = f * stride * d;
            out.extend_from_slice(&src[from..from + kernel * d]);
        }
        let value = Tensor::new(vec![frames, kernel * d], out)?;
        self.push(
            "unfold",
            value,
            Op::Unfold {
                input: x,
                kernel,
                stride,
            },
            &[x],
        )
    }

    /// Reverse pass from a scalar output. Consumes the graph.
    pub fn backward(self, output: Var) -> Result<Gradients<T>> {
        let shape = self.shape(output).to_vec();
        if numel(&shape) != 1 {
            return Err(GradError::NotScalar { shape });
        }
        self.backward_seeded(output, Tensor::filled(shape, T::one()))
    }

    /// Reverse pass with an explicit output adjoint (vector-Jacobian product).
    pub fn backward_seeded(self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(output) {
            return Err(GradError::ShapeMismatch {
                op: "backward",
                left: self.shape(output).to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        let mut leaf_grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        if nodes[output.0].requires_grad {
            grads[output.0] = Some(seed.into_data());
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Leaf => {
                    leaf_grads[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                &Op::MatMul(a, b) => {
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let bv = nodes[b.0].value.data();
                    if let Some(ga) = grad_buf(&nodes, &mut grads, a) {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                                ga[i * k + p] += dot;
                            }
                        }
                    }
                    let av = nodes[a.0].value.data();
                    if let Some(gb) = grad_buf(&nodes, &mut grads, b) {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                for (acc, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *acc += x * y;
                                }
                            }
                        }
                    }
                }
                &Op::Add(a, b) | &Op::Sub(a, b) => {
                    let negate = matches!(node.op, Op::Sub(..));
                    if let Some(ga) = grad_buf(&nodes, &mut grads, a) {
                        ga.iter_mut().zip(&g).for_each(|(acc, &v)| *acc += v);
                    }
                    if let Some(gb) = grad_buf(&nodes, &mut grads, b) {
                        let nb = gb.len();
                        for (i, &v) in g.iter().enumerate() {
                            if negate {
                                gb[i % nb] -= v;
                            } else {
                                gb[i % nb] += v;
                            }
                        }
                    }
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let nb = bv.len();
                    if let Some(ga) = grad_buf(&nodes, &mut grads, a) {
                        for (i, &v) in g.iter().enumerate() {
                            ga[i] += v * bv[i % nb];
                        }
                    }
                    if let Some(gb) = grad_buf(&nodes, &mut grads, b) {
                        for (i, &v) in g.iter().enumerate() {
                            gb[i % nb] += v * av[i];
                        }
                    }
                }
                &Op::Scale(x, c) => {
                    if let Some(gx) = grad_buf(&nodes, &mut grads, x) {
                        gx.iter_mut().zip(&g).for_each(|(acc, &v)| *acc += v * c);
                    }
                }
                &Op::AddScalar(x) | &Op::Reshape(x) => {
                    if let Some(gx) = grad_buf(&nodes, &mut grads, x) {
                        gx.iter_mut().zip(&g).for_each(|(acc, &v)| *acc += v);
                    }
                }
                &Op::Sigmoid(x) => {
                    if let Some(gx) = grad_buf(&nodes, &mut grads, x) {
                        for ((acc, &v), &y) in gx.iter_mut().zip(&g).zip(out) {
                            *acc += v * y * (T::one() - y);
                        }
                    }
                }
                &Op::Tanh(x) => {
                    if let Some(gx) = grad_buf(&nodes, &mut grads, x) {
                        for ((acc, &v), &y) in gx.iter_mut().zip(&g).zip(out) {
                            *acc += v * (T::one() - y * y);
                        }
                    }
                }
                &Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    if let Some(gx) = grad_buf(&nodes, &mut grads, x) {
                        for ((acc, &v), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                            if xi > T::zero() {
                                *acc += v;
                            }
                        }
                    }
                }
                &Op::Map { input, deriv } => {
                    let xv = nodes[input.0].value.data();
                    if let Some(gx) = grad_buf(&nodes, &mut grads, input) {
                        for (i, &v) in g.iter().enumerate() {
                            gx[i] += v * deriv(xv[i], out[i]);
                        }
                    }
                }
                &Op::Softmax { input, axis } => {
                    let (outer, len, inner) = split_axis(node.value.shape(), axis);
                    if let Some(gx) = grad_buf(&nodes, &mut grads, input) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |a: usize| (o * len + a) * inner + i;
                                let dot: T = (0..len).map(|a| g[idx(a)] * out[idx(a)]).sum();
                                for a in 0..len {
                                    gx[idx(a)] += out[idx(a)] * (g[idx(a)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let axis = *axis;
                    let shape = node.value.shape();
                    let outer = numel(&shape[..axis]);
                    let inner = numel(&shape[axis + 1..]);
                    let total = shape[axis] * inner;
                    let mut offset = 0;
                    for &v in inputs {
                        let chunk = nodes[v.0].value.shape()[axis] * inner;
                        if let Some(gv) = grad_buf(&nodes, &mut grads, v) {
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + chunk];
                                for (acc, &s) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *acc += s;
                                }
                            }
                        }
                        offset += chunk;
                    }
                }
                &Op::Slice { input, axis, start } => {
                    let len = node.value.shape()[axis];
                    let (outer, full, inner) = split_axis(nodes[input.0].value.shape(), axis);
                    if let Some(gx) = grad_buf(&nodes, &mut grads, input) {
                        for o in 0..outer {
                            let to = (o * full + start) * inner;
                            let src = &g[o * len * inner..(o + 1) * len * inner];
                            for (acc, &s) in gx[to..to + len * inner].iter_mut().zip(src) {
                                *acc += s;
                            }
                        }
                    }
                }
                &Op::Transpose(x) => {
                    let (r, c) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                    if let Some(gx) = grad_buf(&nodes, &mut grads, x) {
                        for i in 0..r {
                            for j in 0..c {
                                gx[i * c + j] += g[j * r + i];
                            }
                        }
                    }
                }
                &Op::Sum { input, axis } | &Op::Mean { input, axis } => {
                    let (outer, len, inner) = split_axis(nodes[input.0].value.shape(), axis);
                    let factor = if matches!(node.op, Op::Mean { .. }) {
                        T::one() / T::of(len as f64)
                    } else {
                        T::one()
                    };
                    if let Some(gx) = grad_buf(&nodes, &mut grads, input) {
                        for o in 0..outer {
                            for a in 0..len {
                                let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                                for (acc, &v) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                    *acc += v * factor;
                                }
                            }
                        }
                    }
                }
                &Op::SumAll(x) => {
                    if let Some(gx) = grad_buf(&nodes, &mut grads, x) {
                        let v = g[0];
                        gx.iter_mut().for_each(|acc| *acc += v);
                    }
                }
                &Op::L2Normalize { input, axis, eps } => {
                    let xv = nodes[input.0].value.data();
                    let (outer, len, inner) = split_axis(node.value.shape(), axis);
                    if let Some(gx) = grad_buf(&nodes, &mut grads, input) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |a: usize| (o * len + a) * inner + i;
                                let sq: T = (0..len).map(|a| xv[idx(a)] * xv[idx(a)]).sum();
                                let norm = (sq + eps).sqrt();
                                let dot: T = (0..len).map(|a| g[idx(a)] * out[idx(a)]).sum();
                                for a in 0..len {
                                    gx[idx(a)] += (g[idx(a)] - out[idx(a)] * dot) / norm;
                                }
                            }
                        }
                    }
                }
                &Op::Unfold { input, kernel, stride } => {
                    let d = nodes[input.0].value.shape()[1];
                    let frames = node.value.shape()[0];
                    let width = kernel * d;
                    if let Some(gx) = grad_buf(&nodes, &mut grads, input) {
                        for f in 0..frames {
                            let to = f * stride * d;
                            for (acc, &v) in gx[to..to + width].iter_mut().zip(&g[f * width..(f + 1) * width]) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Accumulated gradients of the leaves that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` if the leaf did not require a gradient or
    /// did not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
