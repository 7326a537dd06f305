use std::cell::RefCell;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{split_axis, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Sum(usize),
    Mean(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        axis: usize,
        rstd: Vec<T>,
    },
    Gelu(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Scale(usize, T),
    AddScalar(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Nodes are appended in evaluation order, so every input id is smaller than
/// the id of the node that consumes it. Values are never mutated once
/// recorded.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Only leaves created with `requires_grad` (and nodes
    /// that depend on them) receive gradients.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let id = self.push(value, Op::Leaf, requires_grad);
        Var { tape: self, id }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        nodes.len() - 1
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![T::ONE]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&nodes, &mut grads, *a, || g.clone());
                    accumulate(&nodes, &mut grads, *b, || {
                        reduce_broadcast(&g, nodes[*b].value.numel())
                    });
                }
                Op::Sub(a, b) => {
                    accumulate(&nodes, &mut grads, *a, || g.clone());
                    accumulate(&nodes, &mut grads, *b, || {
                        let mut r = reduce_broadcast(&g, nodes[*b].value.numel());
                        r.iter_mut().for_each(|v| *v = -*v);
                        r
                    });
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let m = bv.len();
                    accumulate(&nodes, &mut grads, *a, || {
                        let mut r = Vec::with_capacity(g.len());
                        for gc in g.chunks_exact(m.max(1)) {
                            r.extend(gc.iter().zip(bv).map(|(&gi, &b)| gi * b));
                        }
                        r
                    });
                    accumulate(&nodes, &mut grads, *b, || {
                        let mut r = vec![T::ZERO; m];
                        for (gc, ac) in g.chunks_exact(m.max(1)).zip(av.chunks_exact(m.max(1))) {
                            r.iter_mut()
                                .zip(gc.iter().zip(ac))
                                .for_each(|(o, (&gi, &a))| *o += gi * a);
                        }
                        r
                    });
                }
                Op::MatMul(a, b) => {
                    let at = &nodes[*a].value;
                    let bt = &nodes[*b].value;
                    let dims = MatDims::of(at.shape(), bt.shape())?;
                    accumulate(&nodes, &mut grads, *a, || {
                        matmul_grad_lhs(&g, bt.data(), &dims)
                    });
                    accumulate(&nodes, &mut grads, *b, || {
                        matmul_grad_rhs(&g, at.data(), &dims)
                    });
                }
                Op::Transpose(x) => {
                    let shape = out.shape();
                    accumulate(&nodes, &mut grads, *x, || transpose_last2(&g, shape));
                }
                Op::Reshape(x) => {
                    accumulate(&nodes, &mut grads, *x, || g.clone());
                }
                Op::Slice { x, axis, start } => {
                    let in_shape = nodes[*x].value.shape();
                    let (outer, extent, inner) = split_axis("slice", in_shape, *axis)?;
                    let len = out.shape()[*axis];
                    accumulate(&nodes, &mut grads, *x, || {
                        let mut r = vec![T::ZERO; outer * extent * inner];
                        for o in 0..outer {
                            let src = &g[o * len * inner..(o + 1) * len * inner];
                            let dst = o * extent * inner + start * inner;
                            r[dst..dst + len * inner].copy_from_slice(src);
                        }
                        r
                    });
                }
                Op::Concat { xs, axis } => {
                    let (outer, total, inner) = split_axis("concat", out.shape(), *axis)?;
                    let mut offset = 0;
                    for &x in xs {
                        let len = nodes[x].value.shape()[*axis];
                        accumulate(&nodes, &mut grads, x, || {
                            let mut r = Vec::with_capacity(outer * len * inner);
                            for o in 0..outer {
                                let base = o * total * inner + offset * inner;
                                r.extend_from_slice(&g[base..base + len * inner]);
                            }
                            r
                        });
                        offset += len;
                    }
                }
                Op::Sum(x) => {
                    let n = nodes[*x].value.numel();
                    accumulate(&nodes, &mut grads, *x, || vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = nodes[*x].value.numel();
                    let v = g[0] / T::from_usize(n);
                    accumulate(&nodes, &mut grads, *x, || vec![v; n]);
                }
                Op::Softmax { x, axis } => {
                    let lanes = Lanes::of("softmax", out.shape(), *axis)?;
                    accumulate(&nodes, &mut grads, *x, || {
                        let mut r = vec![T::ZERO; g.len()];
                        lanes.map(&[out.data(), &g], &mut r, |ins, o| {
                            softmax_grad_lane(ins[0], ins[1], o)
                        });
                        r
                    });
                }
                Op::LayerNorm { x, axis, rstd } => {
                    let lanes = Lanes::of("layer_norm", out.shape(), *axis)?;
                    accumulate(&nodes, &mut grads, *x, || {
                        let mut r = vec![T::ZERO; g.len()];
                        let mut lane = 0;
                        lanes.map(&[out.data(), &g], &mut r, |ins, o| {
                            layer_norm_grad_lane(ins[0], ins[1], rstd[lane], o);
                            lane += 1;
                        });
                        r
                    });
                }
                Op::Gelu(x) => {
                    let xv = nodes[*x].value.data();
                    accumulate(&nodes, &mut grads, *x, || {
                        xv.iter().zip(&g).map(|(&v, &gi)| gi * gelu_grad(v)).collect()
                    });
                }
                Op::Sigmoid(x) => {
                    let y = out.data();
                    accumulate(&nodes, &mut grads, *x, || {
                        y.iter().zip(&g).map(|(&s, &gi)| gi * s * (T::ONE - s)).collect()
                    });
                }
                Op::Log(x) => {
                    let xv = nodes[*x].value.data();
                    accumulate(&nodes, &mut grads, *x, || {
                        xv.iter().zip(&g).map(|(&v, &gi)| gi / v).collect()
                    });
                }
                Op::Exp(x) => {
                    let y = out.data();
                    accumulate(&nodes, &mut grads, *x, || {
                        y.iter().zip(&g).map(|(&e, &gi)| gi * e).collect()
                    });
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&nodes, &mut grads, *x, || g.iter().map(|&gi| gi * c).collect());
                }
                Op::AddScalar(x) => {
                    accumulate(&nodes, &mut grads, *x, || g.clone());
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape"))
                }
                (Op::Leaf, None) if node.requires_grad => Some(Tensor::zeros(node.value.shape())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: usize,
    contribution: impl FnOnce() -> Vec<T>,
) {
    if !nodes[id].requires_grad {
        return;
    }
    let c = contribution();
    match &mut grads[id] {
        Some(existing) => existing.iter_mut().zip(c).for_each(|(e, v)| *e += v),
        slot @ None => *slot = Some(c),
    }
}

/// The 1-D lanes of a tensor along one axis. Lanes are visited in
/// `(outer, inner)` row-major order.
struct Lanes {
    outer: usize,
    extent: usize,
    inner: usize,
}

impl Lanes {
    fn of(op: &'static str, shape: &[usize], axis: usize) -> Result<Self> {
        let (outer, extent, inner) = split_axis(op, shape, axis)?;
        Ok(Self { outer, extent, inner })
    }

    fn count(&self) -> usize {
        self.outer * self.inner
    }

    /// Calls `f` with each lane of every input and the matching output lane.
    /// Strided lanes are gathered into scratch buffers and scattered back.
    fn map<T: Real>(&self, inputs: &[&[T]], out: &mut [T], mut f: impl FnMut(&[&[T]], &mut [T])) {
        let (e, inner) = (self.extent, self.inner);
        if inner == 1 {
            for (lane, o) in out.chunks_exact_mut(e.max(1)).enumerate() {
                let ins: Vec<&[T]> = inputs.iter().map(|x| &x[lane * e..(lane + 1) * e]).collect();
                f(&ins, o);
            }
            return;
        }
        let mut scratch: Vec<Vec<T>> = vec![vec![T::ZERO; e]; inputs.len()];
        let mut o_buf = vec![T::ZERO; e];
        for o in 0..self.outer {
            for i in 0..inner {
                let at = |k: usize| o * e * inner + k * inner + i;
                for (buf, x) in scratch.iter_mut().zip(inputs) {
                    buf.iter_mut().enumerate().for_each(|(k, v)| *v = x[at(k)]);
                }
                let ins: Vec<&[T]> = scratch.iter().map(Vec::as_slice).collect();
                f(&ins, &mut o_buf);
                o_buf.iter().enumerate().for_each(|(k, &v)| out[at(k)] = v);
            }
        }
    }
}

fn softmax_lane<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(x[0], T::max);
    let mut total = T::ZERO;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o = *o / total);
}

fn softmax_grad_lane<T: Real>(y: &[T], g: &[T], r: &mut [T]) {
    let dot: T = g.iter().zip(y).map(|(&gk, &yk)| gk * yk).sum();
    for ((rk, &yk), &gk) in r.iter_mut().zip(y).zip(g) {
        *rk = yk * (gk - dot);
    }
}

/// Writes the normalized lane and returns `1/sqrt(var + eps)`.
fn layer_norm_lane<T: Real>(x: &[T], out: &mut [T], eps: T) -> T {
    let n = T::from_usize(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let s = T::ONE / (var + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mean) * s;
    }
    s
}

fn layer_norm_grad_lane<T: Real>(y: &[T], g: &[T], s: T, r: &mut [T]) {
    let n = T::from_usize(y.len());
    let g_mean = g.iter().copied().sum::<T>() / n;
    let gy_mean = g.iter().zip(y).map(|(&gk, &yk)| gk * yk).sum::<T>() / n;
    for ((rk, &yk), &gk) in r.iter_mut().zip(y).zip(g) {
        *rk = s * (gk - g_mean - yk * gy_mean);
    }
}

fn reduce_broadcast<T: Real>(g: &[T], m: usize) -> Vec<T> {
    if g.len() == m {
        return g.to_vec();
    }
    let mut r = vec![T::ZERO; m];
    for chunk in g.chunks_exact(m) {
        r.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
    }
    r
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf; leaves the loss does not depend on get zeros.
    /// Returns `None` for intermediate nodes and non-differentiable leaves.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

impl MatDims {
    fn of(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batch: usize = a[..a.len() - 2].iter().product();
        let shared_rhs = b.len() == 2;
        if !shared_rhs && a[..a.len() - 2] != b[..b.len() - 2] {
            return Err(mismatch());
        }
        Ok(Self {
            batch,
            m,
            k,
            n,
            shared_rhs,
        })
    }

    fn rhs_offset(&self, b: usize) -> usize {
        if self.shared_rhs {
            0
        } else {
            b * self.k * self.n
        }
    }
}

fn matmul_forward<T: Real>(a: &[T], b: &[T], d: &MatDims) -> Vec<T> {
    let mut out = vec![T::ZERO; d.batch * d.m * d.n];
    for bi in 0..d.batch {
        let a_b = &a[bi * d.m * d.k..(bi + 1) * d.m * d.k];
        let b_b = &b[d.rhs_offset(bi)..d.rhs_offset(bi) + d.k * d.n];
        let o_b = &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n];
        for i in 0..d.m {
            let row = &mut o_b[i * d.n..(i + 1) * d.n];
            for kk in 0..d.k {
                let aik = a_b[i * d.k + kk];
                let brow = &b_b[kk * d.n..(kk + 1) * d.n];
                row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aik * bv);
            }
        }
    }
    out
}

// dA = dC · Bᵀ
fn matmul_grad_lhs<T: Real>(g: &[T], b: &[T], d: &MatDims) -> Vec<T> {
    let mut r = vec![T::ZERO; d.batch * d.m * d.k];
    let mut b_t = Vec::new();
    for bi in 0..d.batch {
        let g_b = &g[bi * d.m * d.n..(bi + 1) * d.m * d.n];
        if bi == 0 || !d.shared_rhs {
            let b_b = &b[d.rhs_offset(bi)..d.rhs_offset(bi) + d.k * d.n];
            b_t = transpose_last2(b_b, &[d.k, d.n]);
        }
        let r_b = &mut r[bi * d.m * d.k..(bi + 1) * d.m * d.k];
        for i in 0..d.m {
            let row = &mut r_b[i * d.k..(i + 1) * d.k];
            for nn in 0..d.n {
                let gin = g_b[i * d.n + nn];
                let bt_row = &b_t[nn * d.k..(nn + 1) * d.k];
                row.iter_mut().zip(bt_row).for_each(|(o, &bv)| *o += gin * bv);
            }
        }
    }
    r
}

// dB = Aᵀ · dC, summed over the batch when B is shared
fn matmul_grad_rhs<T: Real>(g: &[T], a: &[T], d: &MatDims) -> Vec<T> {
    let rhs_batches = if d.shared_rhs { 1 } else { d.batch };
    let mut r = vec![T::ZERO; rhs_batches * d.k * d.n];
    for bi in 0..d.batch {
        let g_b = &g[bi * d.m * d.n..(bi + 1) * d.m * d.n];
        let a_b = &a[bi * d.m * d.k..(bi + 1) * d.m * d.k];
        let off = d.rhs_offset(bi);
        let r_b = &mut r[off..off + d.k * d.n];
        for i in 0..d.m {
            let grow = &g_b[i * d.n..(i + 1) * d.n];
            for kk in 0..d.k {
                let aik = a_b[i * d.k + kk];
                let rrow = &mut r_b[kk * d.n..(kk + 1) * d.n];
                rrow.iter_mut().zip(grow).for_each(|(o, &gv)| *o += aik * gv);
            }
        }
    }
    r
}

/// Swaps the last two axes of row-major data laid out with `shape`.
fn transpose_last2<T: Real>(data: &[T], shape: &[usize]) -> Vec<T> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let mut out = vec![T::ZERO; data.len()];
    for (b, chunk) in data.chunks_exact(rows * cols).enumerate() {
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = chunk[i * cols + j];
            }
        }
    }
    out
}

fn std_normal_cdf<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

fn gelu<T: Real>(x: T) -> T {
    x * std_normal_cdf(x)
}

fn gelu_grad<T: Real>(x: T) -> T {
    let pdf = (-(x * x) * T::from_f64(0.5)).exp() / T::from_f64((2.0 * PI).sqrt());
    std_normal_cdf(x) + x * pdf
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Copy of the recorded forward value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> Option<T> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn unary(&self, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Self> {
        let value = f(&self.tape.nodes.borrow()[self.id].value)?;
        let rg = self.tape.needs_grad(&[self.id]);
        Ok(self.tape.var(self.tape.push(value, op, rg)))
    }

    fn elementwise(
        &self,
        rhs: Var<'t, T>,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            if !a.shape().ends_with(b.shape()) {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let bd = b.data();
            let mut data = Vec::with_capacity(a.numel());
            for chunk in a.data().chunks_exact(b.numel().max(1)) {
                data.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.tape.needs_grad(&[self.id, rhs.id]);
        Ok(self.tape.var(self.tape.push(value, op, rg)))
    }

    pub fn add(&self, rhs: Var<'t, T>) -> Result<Self> {
        self.elementwise(rhs, "add", Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(&self, rhs: Var<'t, T>) -> Result<Self> {
        self.elementwise(rhs, "sub", Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    pub fn mul(&self, rhs: Var<'t, T>) -> Result<Self> {
        self.elementwise(rhs, "mul", Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    pub fn matmul(&self, rhs: Var<'t, T>) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            let d = MatDims::of(a.shape(), b.shape())?;
            let mut shape = a.shape().to_vec();
            let last = shape.len() - 1;
            shape[last] = d.n;
            Tensor::new(shape, matmul_forward(a.data(), b.data(), &d))?
        };
        let rg = self.tape.needs_grad(&[self.id, rhs.id]);
        Ok(self.tape.var(self.tape.push(value, Op::MatMul(self.id, rhs.id), rg)))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        self.unary(Op::Transpose(self.id), |x| {
            let r = x.rank();
            if r < 2 {
                return Err(Error::InvalidShape {
                    op: "transpose",
                    shape: x.shape().to_vec(),
                    reason: "rank must be at least 2".into(),
                });
            }
            let mut shape = x.shape().to_vec();
            shape.swap(r - 2, r - 1);
            Tensor::new(shape, transpose_last2(x.data(), x.shape()))
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.unary(Op::Reshape(self.id), |x| {
            let numel: usize = shape.iter().product();
            if numel != x.numel() {
                return Err(Error::ShapeMismatch {
                    op: "reshape",
                    lhs: x.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Tensor::new(shape.to_vec(), x.data().to_vec())
        })
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.unary(Op::Slice { x: self.id, axis, start }, |x| {
            let (outer, extent, inner) = split_axis("slice", x.shape(), axis)?;
            if len == 0 || start + len > extent {
                return Err(Error::InvalidShape {
                    op: "slice",
                    shape: x.shape().to_vec(),
                    reason: format!("range {start}..{} exceeds axis {axis}", start + len),
                });
            }
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * extent * inner + start * inner;
                data.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = len;
            Tensor::new(shape, data)
        })
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            op: "concat",
            shape: Vec::new(),
            reason: "nothing to concatenate".into(),
        })?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let base = nodes[first.id].value.shape().to_vec();
            let (outer, _, inner) = split_axis("concat", &base, axis)?;
            let mut total = 0;
            for p in parts {
                let s = nodes[p.id].value.shape();
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(&base)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: base.clone(),
                        rhs: s.to_vec(),
                    });
                }
                total += s[axis];
            }
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let t = &nodes[p.id].value;
                    let len = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
                }
            }
            let mut shape = base;
            shape[axis] = total;
            Tensor::new(shape, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.needs_grad(&ids);
        Ok(tape.var(tape.push(value, Op::Concat { xs: ids, axis }, rg)))
    }

    /// Sum of all entries (rank-0 result).
    pub fn sum(&self) -> Result<Self> {
        self.unary(Op::Sum(self.id), |x| Ok(Tensor::scalar(x.data().iter().copied().sum())))
    }

    /// Mean of all entries (rank-0 result).
    pub fn mean(&self) -> Result<Self> {
        self.unary(Op::Mean(self.id), |x| {
            let s: T = x.data().iter().copied().sum();
            Ok(Tensor::scalar(s / T::from_usize(x.numel())))
        })
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        self.unary(Op::Softmax { x: self.id, axis }, |x| {
            let lanes = Lanes::of("softmax", x.shape(), axis)?;
            let mut out = vec![T::ZERO; x.numel()];
            lanes.map(&[x.data()], &mut out, |ins, o| softmax_lane(ins[0], o));
            Tensor::new(x.shape().to_vec(), out)
        })
    }

    /// Normalizes to zero mean and unit (biased) variance along `axis`.
    /// No affine parameters; scale and shift are separate `mul`/`add` nodes.
    pub fn layer_norm(&self, axis: usize, eps: f64) -> Result<Self> {
        let (value, rstd) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let lanes = Lanes::of("layer_norm", x.shape(), axis)?;
            let eps = T::from_f64(eps);
            let mut out = vec![T::ZERO; x.numel()];
            let mut rstd = Vec::with_capacity(lanes.count());
            lanes.map(&[x.data()], &mut out, |ins, o| rstd.push(layer_norm_lane(ins[0], o, eps)));
            (Tensor::new(x.shape().to_vec(), out)?, rstd)
        };
        let rg = self.tape.needs_grad(&[self.id]);
        let op = Op::LayerNorm {
            x: self.id,
            axis,
            rstd,
        };
        Ok(self.tape.var(self.tape.push(value, op, rg)))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self) -> Result<Self> {
        self.unary(Op::Gelu(self.id), |x| Ok(x.map(gelu)))
    }

    pub fn sigmoid(&self) -> Result<Self> {
        self.unary(Op::Sigmoid(self.id), |x| {
            Ok(x.map(|v| T::ONE / (T::ONE + (-v).exp())))
        })
    }

    pub fn log(&self) -> Result<Self> {
        self.unary(Op::Log(self.id), |x| Ok(x.map(T::ln)))
    }

    pub fn exp(&self) -> Result<Self> {
        self.unary(Op::Exp(self.id), |x| Ok(x.map(T::exp)))
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        let c = T::from_f64(c);
        self.unary(Op::Scale(self.id, c), |x| Ok(x.map(|v| v * c)))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Self> {
        let c = T::from_f64(c);
        self.unary(Op::AddScalar(self.id), |x| Ok(x.map(|v| v + c)))
    }

    pub fn neg(&self) -> Result<Self> {
        self.scale(-1.0)
    }
}
