//! Dense tensors and a define-by-run reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation as it executes; [`Graph::backward`]
//! replays the record in reverse to accumulate gradients. Graphs are cheap
//! and live for a single forward/backward pass; parameters persist outside
//! the graph and are re-registered as leaves each pass. A graph and its
//! nodes are confined to one thread; nothing here is shared.

mod check;

pub use check::{analytic_gradient, fd_gradient, grad_check};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major tensor. `values.len()` always equals the product of
/// `shape`; constructors enforce this.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if numel(&shape) != values.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} elements but {} values were given",
                shape,
                numel(&shape),
                values.len()
            )));
        }
        Ok(Tensor { shape, values, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor { shape, values: vec![T::zero(); n], requires_grad: false, grad: None }
    }

    pub fn scalar(x: T) -> Self {
        Tensor { shape: vec![1], values: vec![x], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Lossless elementwise cast (f32 -> f64 is exact; f64 -> f32 rounds).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Affine { x: usize, w: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Concat { a: usize, b: usize, a_last: usize, b_last: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    Sqrt { a: usize },
    Softmax { a: usize, axis: usize },
    ReduceMax { a: usize, argmax: Vec<usize> },
    SumAxis { a: usize, axis: usize },
    Sum { a: usize },
    Gather { a: usize, indices: Vec<usize> },
    Reshape { a: usize },
}

struct Node<T: Real> {
    op: Op,
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    needs_grad: bool,
}

/// Operation tape. Records forward computation and differentiates it.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a graph input. Gradients are accumulated for it
    /// iff `t.requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs = t.requires_grad;
        self.push(Op::Leaf, t.shape, t.values, needs)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t.shape, t.values, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: Var) -> &[T] {
        &self.nodes[v.0].values
    }

    /// Gradient of the last `backward` target with respect to `v`, if `v`
    /// lies on a differentiable path to it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        Tensor {
            shape: node.shape.clone(),
            values: node.values.clone(),
            requires_grad: node.needs_grad,
            grad: node.grad.clone(),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Node { op, shape, values, grad: None, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {:?} and {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_kernel(self.values(a), self.values(b), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul { a: a.0, b: b.0, m, k, n }, vec![m, n], out, needs))
    }

    /// Fused `x·W + b` for `[m,k] x [k,n] + [1,n]`, the whole linear layer
    /// as one node. The bias gradient is the column sum of the output
    /// gradient.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let ok = sx.len() == 2
            && sw.len() == 2
            && sx[1] == sw[0]
            && sb.len() == 2
            && sb[0] == 1
            && sb[1] == sw[1];
        if !ok {
            return Err(Error::dim(format!("affine of {:?}, {:?}, {:?}", sx, sw, sb)));
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(self.values(b));
        }
        matmul_kernel(self.values(x), self.values(w), &mut out, m, k, n);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Affine { x: x.0, w: w.0, b: b.0, m, k, n }, vec![m, n], out, needs))
    }

    fn binary_same_shape(&mut self, name: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{} of {:?} and {:?}",
                name,
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out: Vec<T> =
            self.values(a).iter().zip(self.values(b)).map(|(&x, &y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, shape, out, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out: Vec<T> =
            self.values(a).iter().zip(self.values(b)).map(|(&x, &y)| x - y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, shape, out, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out: Vec<T> =
            self.values(a).iter().zip(self.values(b)).map(|(&x, &y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, shape, out, needs))
    }

    /// Multiplication by a compile-time-known scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cv = T::of(c);
        let out: Vec<T> = self.values(a).iter().map(|&x| x * cv).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Scale { a: a.0, c }, shape, out, needs)
    }

    /// Concatenation along the last axis. All leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == sb.len()
            && !sa.is_empty()
            && sa[..sa.len() - 1] == sb[..sb.len() - 1];
        if !ok {
            return Err(Error::dim(format!("concat of {:?} and {:?}", sa, sb)));
        }
        let (a_last, b_last) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = numel(sa) / a_last.max(1);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = a_last + b_last;
        let mut out = Vec::with_capacity(rows * (a_last + b_last));
        for r in 0..rows {
            out.extend_from_slice(&self.values(a)[r * a_last..(r + 1) * a_last]);
            out.extend_from_slice(&self.values(b)[r * b_last..(r + 1) * b_last]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Concat { a: a.0, b: b.0, a_last, b_last }, shape, out, needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let out: Vec<T> =
            self.values(a).iter().map(|&x| one / (one + (-x).exp())).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Sigmoid { a: a.0 }, shape, out, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out: Vec<T> = self.values(a).iter().map(|&x| x.tanh()).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Tanh { a: a.0 }, shape, out, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let z = T::zero();
        let out: Vec<T> = self.values(a).iter().map(|&x| x.max(z)).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Relu { a: a.0 }, shape, out, needs)
    }

    /// Elementwise square root. The derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out: Vec<T> = self.values(a).iter().map(|&x| x.sqrt()).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Sqrt { a: a.0 }, shape, out, needs)
    }

    fn axis_split(&self, v: Var, axis: usize, op: &str) -> Result<(usize, usize, usize)> {
        let shape = self.shape(v);
        if axis >= shape.len() {
            return Err(Error::dim(format!("{} axis {} of shape {:?}", op, axis, shape)));
        }
        if shape[axis] == 0 {
            return Err(Error::dim(format!("{} over empty axis {} of {:?}", op, axis, shape)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        Ok((outer, shape[axis], inner))
    }

    /// Softmax along `axis`; every slice along the axis sums to one.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, mid, inner) = self.axis_split(a, axis, "softmax")?;
        let x = self.values(a);
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * mid * inner + i;
                let mut mx = x[base];
                for j in 1..mid {
                    mx = mx.max(x[base + j * inner]);
                }
                let mut sum = T::zero();
                for j in 0..mid {
                    let e = (x[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum = sum + e;
                }
                for j in 0..mid {
                    out[base + j * inner] = out[base + j * inner] / sum;
                }
            }
        }
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Softmax { a: a.0, axis }, shape, out, needs))
    }

    /// Maximum along `axis`, which is removed from the shape. Ties resolve to
    /// the lowest index; the gradient flows only to the winning element.
    pub fn reduce_max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, mid, inner) = self.axis_split(a, axis, "reduce_max")?;
        let x = self.values(a);
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * mid * inner + i;
                let mut best = x[base];
                let mut best_j = 0usize;
                for j in 1..mid {
                    let v = x[base + j * inner];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = base + best_j * inner;
            }
        }
        let mut shape = self.shape(a).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let needs = self.needs(a);
        Ok(self.push(Op::ReduceMax { a: a.0, argmax }, shape, out, needs))
    }

    /// Sum along `axis`, which is removed from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, mid, inner) = self.axis_split(a, axis, "sum_axis")?;
        let x = self.values(a);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..mid {
                let base = o * mid * inner + j * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&x[base..base + inner]) {
                    *d = *d + s;
                }
            }
        }
        let mut shape = self.shape(a).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let needs = self.needs(a);
        Ok(self.push(Op::SumAxis { a: a.0, axis }, shape, out, needs))
    }

    /// Total sum, yielding a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.values(a) {
            acc = acc + v;
        }
        let needs = self.needs(a);
        self.push(Op::Sum { a: a.0 }, vec![1], vec![acc], needs)
    }

    /// Row selection along the first axis: `out[i] = a[indices[i]]`. Rows may
    /// repeat; the backward pass scatter-adds into the source.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        if shape.is_empty() {
            return Err(Error::dim(format!("gather from shape {:?}", shape)));
        }
        let rows = shape[0];
        let block: usize = shape[1..].iter().product();
        for &ix in indices {
            if ix >= rows {
                return Err(Error::Index { index: ix, extent: rows });
            }
        }
        let x = self.values(a);
        let mut out = Vec::with_capacity(indices.len() * block);
        for &ix in indices {
            out.extend_from_slice(&x[ix * block..(ix + 1) * block]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = indices.len();
        let needs = self.needs(a);
        Ok(self.push(
            Op::Gather { a: a.0, indices: indices.to_vec() },
            out_shape,
            out,
            needs,
        ))
    }

    /// Reinterprets the value buffer under a new shape of equal element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.values(a).len() {
            return Err(Error::dim(format!(
                "reshape of {:?} to {:?}",
                self.shape(a),
                shape
            )));
        }
        let out = self.values(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape { a: a.0 }, shape, out, needs))
    }

    /// Accumulates `d(loss)/d(node)` for every node on a differentiable path
    /// from a leaf to `loss`. `loss` must be a single-element tensor. Calling
    /// this twice on one graph without [`Graph::zero_grads`] in between is an
    /// error: gradients would silently double.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract("backward called twice without a gradient reset"));
        }
        if self.values(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            self.step_backward(id);
        }
        // Leaves that require a gradient but never reached the loss still
        // report one: zero.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.needs_grad && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.values.len()]);
            }
        }
        Ok(())
    }

    /// Clears every accumulated gradient and re-arms [`Graph::backward`].
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn grad_buf(&mut self, id: usize) -> &mut [T] {
        let n = self.nodes[id].values.len();
        self.nodes[id].grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    fn step_backward(&mut self, id: usize) {
        // Ops only reference earlier nodes, so reverse index order is a valid
        // topological order and `take` here never loses pending gradient.
        let g = self.nodes[id].grad.take().unwrap();
        match std::mem::replace(&mut self.nodes[id].op, Op::Leaf) {
            Op::Leaf => {
                self.nodes[id].op = Op::Leaf;
                self.nodes[id].grad = Some(g);
                return;
            }
            op => {
                self.apply_backward(&op, id, &g);
                self.nodes[id].op = op;
                self.nodes[id].grad = Some(g);
            }
        }
    }

    fn apply_backward(&mut self, op: &Op, id: usize, g: &[T]) {
        match *op {
            Op::Leaf => unreachable!(),
            Op::Matmul { a, b, m, k, n } => {
                if self.nodes[a].needs_grad {
                    let mut da = vec![T::zero(); m * k];
                    matmul_bt_kernel(g, &self.nodes[b].values, &mut da, m, k, n);
                    accumulate(self.grad_buf(a), &da);
                }
                if self.nodes[b].needs_grad {
                    let mut db = vec![T::zero(); k * n];
                    matmul_at_kernel(&self.nodes[a].values, g, &mut db, m, k, n);
                    accumulate(self.grad_buf(b), &db);
                }
            }
            Op::Affine { x, w, b, m, k, n } => {
                if self.nodes[x].needs_grad {
                    let mut dx = vec![T::zero(); m * k];
                    matmul_bt_kernel(g, &self.nodes[w].values, &mut dx, m, k, n);
                    accumulate(self.grad_buf(x), &dx);
                }
                if self.nodes[w].needs_grad {
                    let mut dw = vec![T::zero(); k * n];
                    matmul_at_kernel(&self.nodes[x].values, g, &mut dw, m, k, n);
                    accumulate(self.grad_buf(w), &dw);
                }
                if self.nodes[b].needs_grad {
                    let buf = self.grad_buf(b);
                    for row in g.chunks_exact(n) {
                        accumulate(buf, row);
                    }
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a].needs_grad {
                    accumulate(self.grad_buf(a), g);
                }
                if self.nodes[b].needs_grad {
                    accumulate(self.grad_buf(b), g);
                }
            }
            Op::Sub { a, b } => {
                if self.nodes[a].needs_grad {
                    accumulate(self.grad_buf(a), g);
                }
                if self.nodes[b].needs_grad {
                    for (d, &s) in self.grad_buf(b).iter_mut().zip(g) {
                        *d = *d - s;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.nodes[a].needs_grad {
                    let other: Vec<T> = self.nodes[b].values.clone();
                    for ((d, &s), &o) in self.grad_buf(a).iter_mut().zip(g).zip(&other) {
                        *d = *d + s * o;
                    }
                }
                if self.nodes[b].needs_grad {
                    let other: Vec<T> = self.nodes[a].values.clone();
                    for ((d, &s), &o) in self.grad_buf(b).iter_mut().zip(g).zip(&other) {
                        *d = *d + s * o;
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.nodes[a].needs_grad {
                    let cv = T::of(c);
                    for (d, &s) in self.grad_buf(a).iter_mut().zip(g) {
                        *d = *d + s * cv;
                    }
                }
            }
            Op::Concat { a, b, a_last, b_last } => {
                let rows = g.len() / (a_last + b_last);
                if self.nodes[a].needs_grad {
                    let buf = self.grad_buf(a);
                    for r in 0..rows {
                        let src = &g[r * (a_last + b_last)..r * (a_last + b_last) + a_last];
                        let dst = &mut buf[r * a_last..(r + 1) * a_last];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                if self.nodes[b].needs_grad {
                    let buf = self.grad_buf(b);
                    for r in 0..rows {
                        let src = &g[r * (a_last + b_last) + a_last..(r + 1) * (a_last + b_last)];
                        let dst = &mut buf[r * b_last..(r + 1) * b_last];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::Sigmoid { a } => {
                if self.nodes[a].needs_grad {
                    let y: Vec<T> = self.nodes[id].values.clone();
                    let one = T::one();
                    for ((d, &s), &yv) in self.grad_buf(a).iter_mut().zip(g).zip(&y) {
                        *d = *d + s * yv * (one - yv);
                    }
                }
            }
            Op::Tanh { a } => {
                if self.nodes[a].needs_grad {
                    let y: Vec<T> = self.nodes[id].values.clone();
                    let one = T::one();
                    for ((d, &s), &yv) in self.grad_buf(a).iter_mut().zip(g).zip(&y) {
                        *d = *d + s * (one - yv * yv);
                    }
                }
            }
            Op::Relu { a } => {
                if self.nodes[a].needs_grad {
                    let x: Vec<T> = self.nodes[a].values.clone();
                    let z = T::zero();
                    for ((d, &s), &xv) in self.grad_buf(a).iter_mut().zip(g).zip(&x) {
                        if xv > z {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::Sqrt { a } => {
                if self.nodes[a].needs_grad {
                    let y: Vec<T> = self.nodes[id].values.clone();
                    let half = T::of(0.5);
                    let z = T::zero();
                    for ((d, &s), &yv) in self.grad_buf(a).iter_mut().zip(g).zip(&y) {
                        if yv > z {
                            *d = *d + s * half / yv;
                        }
                    }
                }
            }
            Op::Softmax { a, axis } => {
                if self.nodes[a].needs_grad {
                    let y: Vec<T> = self.nodes[id].values.clone();
                    let (outer, mid, inner) = self.axis_split(Var(id), axis, "softmax").unwrap();
                    let buf = self.grad_buf(a);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * mid * inner + i;
                            let mut dot = T::zero();
                            for j in 0..mid {
                                let ix = base + j * inner;
                                dot = dot + g[ix] * y[ix];
                            }
                            for j in 0..mid {
                                let ix = base + j * inner;
                                buf[ix] = buf[ix] + y[ix] * (g[ix] - dot);
                            }
                        }
                    }
                }
            }
            Op::ReduceMax { a, ref argmax } => {
                if self.nodes[a].needs_grad {
                    let buf = self.grad_buf(a);
                    for (slot, &src_ix) in argmax.iter().enumerate() {
                        buf[src_ix] = buf[src_ix] + g[slot];
                    }
                }
            }
            Op::SumAxis { a, axis } => {
                if self.nodes[a].needs_grad {
                    let (outer, mid, inner) = self.axis_split(Var(a), axis, "sum_axis").unwrap();
                    let buf = self.grad_buf(a);
                    for o in 0..outer {
                        for j in 0..mid {
                            let base = o * mid * inner + j * inner;
                            let src = &g[o * inner..(o + 1) * inner];
                            for (d, &s) in buf[base..base + inner].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if self.nodes[a].needs_grad {
                    let s = g[0];
                    for d in self.grad_buf(a).iter_mut() {
                        *d = *d + s;
                    }
                }
            }
            Op::Gather { a, ref indices } => {
                if self.nodes[a].needs_grad {
                    let block = if indices.is_empty() { 0 } else { g.len() / indices.len() };
                    let buf = self.grad_buf(a);
                    for (r, &ix) in indices.iter().enumerate() {
                        let src = &g[r * block..(r + 1) * block];
                        let dst = &mut buf[ix * block..(ix + 1) * block];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if self.nodes[a].needs_grad {
                    accumulate(self.grad_buf(a), g);
                }
            }
        }
    }
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}


/// `out += a x b` for row-major `[m,k] x [k,n]`.
fn matmul_kernel<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += g x b^T`: gradient wrt the left matmul operand. Row-by-row dot
/// products; the eight independent partial sums break the serial reduction
/// chain so the loop vectorizes.
fn matmul_bt_kernel<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    const LANES: usize = 8;
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = [T::zero(); LANES];
            let mut gc = g_row.chunks_exact(LANES);
            let mut bc = b_row.chunks_exact(LANES);
            for (gs, bs) in (&mut gc).zip(&mut bc) {
                for l in 0..LANES {
                    acc[l] = acc[l] + gs[l] * bs[l];
                }
            }
            let mut tail = T::zero();
            for (&gv, &bv) in gc.remainder().iter().zip(bc.remainder()) {
                tail = tail + gv * bv;
            }
            let total = acc.iter().fold(tail, |s, &v| s + v);
            *o = *o + total;
        }
    }
}

/// `out += a^T x g`: gradient wrt the right matmul operand.
fn matmul_at_kernel<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o = *o + av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], values: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn tensor_rejects_length_mismatch() {
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[3.0, -1.0, 2.5, 4.0]));
        let eye = g.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(a, eye).unwrap();
        assert_eq!(g.values(c), g.values(a));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(vec![2, 3]));
        let b = g.leaf(Tensor::zeros(vec![4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_b_transposed() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).with_grad());
        let b = g.leaf(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum(c);
        g.backward(loss).unwrap();
        // d sum(AB) / dA = ones x B^T; row p of B sums to B[p,0]+B[p,1].
        assert_eq!(g.grad(a).unwrap(), &[11.0, 15.0, 11.0, 15.0]);
    }

    #[test]
    fn concat_of_vectors() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 2], &[1.0, 2.0]));
        let b = g.leaf(t(&[1, 1], &[5.0]));
        let c = g.concat(a, b).unwrap();
        assert_eq!(g.shape(c), &[1, 3]);
        assert_eq!(g.values(c), &[1.0, 2.0, 5.0]);
    }

    #[test]
    fn concat_rejects_leading_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(vec![2, 2]));
        let b = g.leaf(Tensor::zeros(vec![3, 2]));
        assert!(g.concat(a, b).is_err());
    }

    #[test]
    fn softmax_slices_sum_to_one() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 3], &[0.1, 2.0, -1.0, 5.0, 5.0, 5.0]));
        let s = g.softmax(a, 1).unwrap();
        let v = g.values(s);
        for row in v.chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        // Equal logits give the uniform distribution.
        assert!((v[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn reduce_max_ties_pick_lowest_index() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 3], &[7.0, 7.0, 3.0]).with_grad());
        let m = g.reduce_max(a, 1).unwrap();
        assert_eq!(g.values(m), &[7.0]);
        let loss = g.sum(m);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn reduce_max_over_empty_axis_is_dim_error() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::<f64>::zeros(vec![0, 3]));
        assert!(matches!(g.reduce_max(a, 0), Err(Error::Dim(_))));
    }

    #[test]
    fn gather_repeats_rows_and_scatter_adds_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).with_grad());
        let picked = g.gather(a, &[1, 1, 0]).unwrap();
        assert_eq!(g.values(picked), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let loss = g.sum(picked);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_out_of_range_reports_index_and_extent() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::<f64>::zeros(vec![2, 2]));
        match g.gather(a, &[2]) {
            Err(Error::Index { index: 2, extent: 2 }) => {}
            other => panic!("expected index error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn backward_of_sum_fills_ones_and_double_backward_errs() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad());
        let loss = g.sum(w);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
        assert!(matches!(g.backward(loss), Err(Error::Contract(_))));
        g.zero_grads();
        assert!(g.backward(loss).is_ok());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let used = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
        let unused = g.leaf(Tensor::new(vec![2], vec![9.0, 9.0]).unwrap().with_grad());
        let loss = g.sum(used);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn constant_branches_accumulate_no_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
        let c = g.constant(Tensor::new(vec![2], vec![5.0, 5.0]).unwrap());
        let p = g.mul(w, c).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[5.0, 5.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn relu_zeroes_negative_branch_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap().with_grad());
        let y = g.relu(x);
        assert_eq!(g.values(y), &[0.0, 0.0, 2.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sqrt_gradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![0.0, 4.0]).unwrap().with_grad());
        let y = g.sqrt(x);
        assert_eq!(g.values(y), &[0.0, 2.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.25]);
    }
}
