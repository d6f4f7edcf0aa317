use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::kernel::{self, gemm};
use super::{mismatch, ParamId, ParamStore, Tensor, TensorError};

/// Which (query, key) pairs may attend, per batch item. Applies to score
/// tensors shaped `[batch, (heads,) q, k]`, broadcasting over any axes
/// between batch and the last two.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMask {
    batch: usize,
    q: usize,
    k: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn new(batch: usize, q: usize, k: usize, allowed: Vec<bool>) -> Result<Self, TensorError> {
        if allowed.len() != batch * q * k {
            return Err(mismatch("mask", &[batch, q, k], &[allowed.len()]));
        }
        Ok(AttnMask { batch, q, k, allowed })
    }

    /// Lower-triangular mask: query `t` sees keys `0..=t`.
    pub fn causal(batch: usize, len: usize) -> Self {
        let mut allowed = Vec::with_capacity(batch * len * len);
        for _ in 0..batch {
            for t in 0..len {
                allowed.extend((0..len).map(|s| s <= t));
            }
        }
        AttnMask {
            batch,
            q: len,
            k: len,
            allowed,
        }
    }

    /// Every query sees exactly the keys flagged valid for its batch item.
    pub fn keys(q: usize, valid: &[Vec<bool>]) -> Result<Self, TensorError> {
        let batch = valid.len();
        let k = valid.first().map_or(0, Vec::len);
        let mut allowed = Vec::with_capacity(batch * q * k);
        for row in valid {
            if row.len() != k {
                return Err(mismatch("mask", &[k], &[row.len()]));
            }
            for _ in 0..q {
                allowed.extend_from_slice(row);
            }
        }
        Ok(AttnMask { batch, q, k, allowed })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn allowed(&self, b: usize, qi: usize, kj: usize) -> bool {
        self.allowed[(b * self.q + qi) * self.k + kj]
    }
}

#[derive(Debug, Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    Param(ParamId),
    Binary(Bin, usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Neg(usize),
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
        shared: bool,
    },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SumAll(usize),
    MeanAll(usize),
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Dropout(usize, Vec<f64>),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
        denom: f64,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in evaluation order so gradients can be replayed in
/// reverse. One tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(Arc::new(value), Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Arc::new(value), Op::Leaf, false)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push_node(store.shared(id), Op::Param(id), true)
    }

    fn push_node(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_node(Arc::new(value), op, requires_grad)
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, TensorError> {
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let first = values
            .first()
            .ok_or_else(|| mismatch("concat", &[], &[]))?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let agrees =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let run = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * run..(o + 1) * run]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                parts: ids.clone(),
                axis,
            },
            &ids,
        ))
    }

    /// Rows of a `[vocab, d]` table, shaped `[ids.len(), d]`.
    pub fn gather<'t>(&'t self, table: Var<'t>, ids: &[usize]) -> Result<Var<'t>, TensorError> {
        let t = table.value();
        if t.rank() != 2 {
            return Err(mismatch("gather", t.shape(), &[0, 0]));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Gather {
                table: table.id,
                ids: ids.to_vec(),
            },
            &[table.id],
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id].value;
        if root.len() != 1 {
            return Err(TensorError::NotScalar(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor {
            shape: root.shape().to_vec(),
            data: vec![1.0],
        });
        let mut params = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let wants = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| nodes[i].value.as_ref();
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => params.push((*p, id)),
                Op::Binary(kind, a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = vec![0.0; va.len()];
                    let mut gb = vec![0.0; vb.len()];
                    let gd = g.data();
                    match kind {
                        Bin::Add => kernel::for_each_broadcast(g.shape(), va.shape(), vb.shape(), |i, ia, ib| {
                            ga[ia] += gd[i];
                            gb[ib] += gd[i];
                        }),
                        Bin::Sub => kernel::for_each_broadcast(g.shape(), va.shape(), vb.shape(), |i, ia, ib| {
                            ga[ia] += gd[i];
                            gb[ib] -= gd[i];
                        }),
                        Bin::Mul => {
                            let (da, db) = (va.data(), vb.data());
                            kernel::for_each_broadcast(g.shape(), va.shape(), vb.shape(), |i, ia, ib| {
                                ga[ia] += gd[i] * db[ib];
                                gb[ib] += gd[i] * da[ia];
                            })
                        }
                    }
                    if wants(*a) {
                        accumulate(&mut grads, *a, va.shape(), ga);
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, vb.shape(), gb);
                    }
                }
                Op::Scale(a, f) => {
                    let data = g.data().iter().map(|x| x * f).collect();
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::AddScalar(a) => {
                    let data = g.data().to_vec();
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::Relu(a) => {
                    let x = val(*a).data();
                    let data = g
                        .data()
                        .iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let data = g.data().iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::Log(a) => {
                    let x = val(*a).data();
                    let data = g.data().iter().zip(x).map(|(gi, xi)| gi / xi).collect();
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::Neg(a) => {
                    let data = g.data().iter().map(|x| -x).collect();
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::MatMul { a, b, trans_b, shared } => {
                    let (va, vb) = (val(*a), val(*b));
                    let (m, k) = last_two(va.shape());
                    let n = *g.shape().last().expect("matmul output has rank >= 2");
                    let batch = va.len() / (m * k);
                    let gd = g.data();
                    if wants(*a) {
                        let mut ga = vec![0.0; va.len()];
                        if *shared {
                            gemm(batch * m, n, k, gd, false, vb.data(), !trans_b, &mut ga, false);
                        } else {
                            for bi in 0..batch {
                                gemm(
                                    m,
                                    n,
                                    k,
                                    &gd[bi * m * n..(bi + 1) * m * n],
                                    false,
                                    &vb.data()[bi * k * n..(bi + 1) * k * n],
                                    !trans_b,
                                    &mut ga[bi * m * k..(bi + 1) * m * k],
                                    false,
                                );
                            }
                        }
                        accumulate(&mut grads, *a, va.shape(), ga);
                    }
                    if wants(*b) {
                        let mut gb = vec![0.0; vb.len()];
                        let rows = if *shared { batch * m } else { m };
                        let chunks = if *shared { 1 } else { batch };
                        for bi in 0..chunks {
                            let ad = &va.data()[bi * rows * k..(bi + 1) * rows * k];
                            let gs = &gd[bi * rows * n..(bi + 1) * rows * n];
                            let out = &mut gb[bi * k * n..(bi + 1) * k * n];
                            if *trans_b {
                                gemm(n, rows, k, gs, true, ad, false, out, false);
                            } else {
                                gemm(k, rows, n, ad, true, gs, false, out, false);
                            }
                        }
                        accumulate(&mut grads, *b, vb.shape(), gb);
                    }
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.data().to_vec());
                }
                Op::Permute(a, axes) => {
                    let inv = kernel::inverse_axes(axes);
                    let data = kernel::permute(g.data(), g.shape(), &inv);
                    accumulate(&mut grads, *a, val(*a).shape(), data);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let width = *g.shape().last().unwrap_or(&1);
                    let mut data = vec![0.0; y.len()];
                    for ((dx, yr), gr) in data.chunks_mut(width).zip(y.chunks(width)).zip(g.data().chunks(width)) {
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..width {
                            dx[j] = yr[j] * (gr[j] - s);
                        }
                    }
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let d = *g.shape().last().unwrap_or(&1);
                    let gam = val(*gamma).data();
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    let mut dx = vec![0.0; g.len()];
                    for (r, ((gr, xr), dxr)) in g.data().chunks(d).zip(xhat.chunks(d)).zip(dx.chunks_mut(d)).enumerate()
                    {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            dgamma[j] += gr[j] * xr[j];
                            dbeta[j] += gr[j];
                            let dxh = gr[j] * gam[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xr[j];
                        }
                        let (m1, m2) = (sum_dxhat / d as f64, sum_dxhat_xhat / d as f64);
                        for j in 0..d {
                            dxr[j] = inv_std[r] * (gr[j] * gam[j] - m1 - xr[j] * m2);
                        }
                    }
                    if wants(*x) {
                        accumulate(&mut grads, *x, g.shape(), dx);
                    }
                    if wants(*gamma) {
                        accumulate(&mut grads, *gamma, &[d], dgamma);
                    }
                    if wants(*beta) {
                        accumulate(&mut grads, *beta, &[d], dbeta);
                    }
                }
                Op::SumAll(a) => {
                    let v = val(*a);
                    accumulate(&mut grads, *a, v.shape(), vec![g.data()[0]; v.len()]);
                }
                Op::MeanAll(a) => {
                    let v = val(*a);
                    let each = g.data()[0] / v.len() as f64;
                    accumulate(&mut grads, *a, v.shape(), vec![each; v.len()]);
                }
                Op::Gather { table, ids } => {
                    let t = val(*table);
                    let d = t.shape()[1];
                    let mut data = vec![0.0; t.len()];
                    for (row, &i) in g.data().chunks(d).zip(ids) {
                        for (acc, v) in data[i * d..(i + 1) * d].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *table, t.shape(), data);
                }
                Op::Concat { parts, axis } => {
                    let outer: usize = g.shape()[..*axis].iter().product();
                    let inner: usize = g.shape()[axis + 1..].iter().product();
                    let total = g.shape()[*axis];
                    let mut offset = 0;
                    for &p in parts {
                        let v = val(p);
                        let run = v.shape()[*axis] * inner;
                        if wants(p) {
                            let mut data = Vec::with_capacity(v.len());
                            for o in 0..outer {
                                let base = o * total * inner + offset;
                                data.extend_from_slice(&g.data()[base..base + run]);
                            }
                            accumulate(&mut grads, p, v.shape(), data);
                        }
                        offset += run;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let v = val(*x);
                    let full = v.shape()[*axis];
                    let len = g.shape()[*axis];
                    let outer: usize = v.shape()[..*axis].iter().product();
                    let inner: usize = v.shape()[axis + 1..].iter().product();
                    let mut data = vec![0.0; v.len()];
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    accumulate(&mut grads, *x, v.shape(), data);
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                    accumulate(&mut grads, *a, g.shape(), data);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                    denom,
                } => {
                    let v = val(*logits);
                    let width = *v.shape().last().expect("logits have a class axis");
                    let mut data = vec![0.0; v.len()];
                    if *denom > 0.0 {
                        let scale = g.data()[0] / denom;
                        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let row = &mut data[r * width..(r + 1) * width];
                            for (j, slot) in row.iter_mut().enumerate() {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                *slot = scale * w * (probs[r * width + j] - onehot);
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, v.shape(), data);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, params })
    }
}

fn last_two(shape: &[usize]) -> (usize, usize) {
    let r = shape.len();
    (shape[r - 2], shape[r - 1])
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, shape: &[usize], data: Vec<f64>) {
    match &mut grads[id] {
        Some(existing) => {
            for (x, y) in existing.data_mut().iter_mut().zip(&data) {
                *x += y;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data,
            })
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` if `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Per-parameter gradients, summed over every use on the tape.
    pub fn params(&self) -> BTreeMap<ParamId, Tensor> {
        let mut out: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for &(p, node) in &self.params {
            let Some(g) = &self.grads[node] else { continue };
            match out.get_mut(&p) {
                Some(acc) => acc.add_assign(g).expect("same parameter, same shape"),
                None => {
                    out.insert(p, g.clone());
                }
            }
        }
        out
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.push(out, op, &[self.id])
    }

    fn binary(self, other: Var<'t>, kind: Bin) -> Result<Var<'t>, TensorError> {
        let (x, y) = (self.value(), other.value());
        let shape = kernel::broadcast_shape(x.shape(), y.shape()).ok_or_else(|| {
            mismatch(
                match kind {
                    Bin::Add => "add",
                    Bin::Sub => "sub",
                    Bin::Mul => "mul",
                },
                x.shape(),
                y.shape(),
            )
        })?;
        let mut data = vec![0.0; shape.iter().product()];
        let (xd, yd) = (x.data(), y.data());
        match kind {
            Bin::Add => kernel::for_each_broadcast(&shape, x.shape(), y.shape(), |i, a, b| data[i] = xd[a] + yd[b]),
            Bin::Sub => kernel::for_each_broadcast(&shape, x.shape(), y.shape(), |i, a, b| data[i] = xd[a] - yd[b]),
            Bin::Mul => kernel::for_each_broadcast(&shape, x.shape(), y.shape(), |i, a, b| data[i] = xd[a] * yd[b]),
        }
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::Binary(kind, self.id, other.id),
            &[self.id, other.id],
        ))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, Bin::Add)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, Bin::Sub)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, Bin::Mul)
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, factor), |x| x * factor)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    /// Batched `self · other`. `other` is either rank 2 (shared across the
    /// batch) or carries the same leading axes as `self`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.matmul_impl(other, false)
    }

    /// Batched `self · otherᵀ` (transposing the last two axes of `other`).
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'t>, trans_b: bool) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), other.value());
        let (ra, rb) = (a.rank(), b.rank());
        if ra < 2 || rb < 2 {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let (m, k) = last_two(a.shape());
        let (kb, n) = if trans_b {
            let (n, k) = last_two(b.shape());
            (k, n)
        } else {
            last_two(b.shape())
        };
        let lead = &a.shape()[..ra - 2];
        let shared = rb == 2;
        if k != kb || (!shared && lead != &b.shape()[..rb - 2]) {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let batch: usize = lead.iter().product();
        let mut data = vec![0.0; batch * m * n];
        if shared {
            gemm(batch * m, k, n, a.data(), false, b.data(), trans_b, &mut data, false);
        } else {
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    false,
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    trans_b,
                    &mut data[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b,
                shared,
            },
            &[self.id, other.id],
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, TensorError> {
        let out = self.value().as_ref().clone().reshape(shape)?;
        Ok(self.tape.push(out, Op::Reshape(self.id), &[self.id]))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        let mut seen = vec![false; v.rank()];
        if axes.len() != v.rank() {
            return Err(mismatch("permute", v.shape(), axes));
        }
        for &a in axes {
            if a >= v.rank() || seen[a] {
                return Err(mismatch("permute", v.shape(), axes));
            }
            seen[a] = true;
        }
        let data = kernel::permute(v.data(), v.shape(), axes);
        let shape = axes.iter().map(|&a| v.shape()[a]).collect();
        Ok(self
            .tape
            .push(Tensor { shape, data }, Op::Permute(self.id, axes.to_vec()), &[self.id]))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>, TensorError> {
        let r = self.shape().len();
        if r < 2 {
            return Err(TensorError::InvalidAxis { axis: 1, rank: r });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let v = self.value();
        let width = *v.shape().last().unwrap_or(&1);
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(width.max(1)) {
            softmax_row(row, None);
        }
        self.tape.push(
            Tensor {
                shape: v.shape().to_vec(),
                data,
            },
            Op::Softmax(self.id),
            &[self.id],
        )
    }

    /// Softmax over `axis`.
    pub fn softmax_axis(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let r = self.shape().len();
        if axis >= r {
            return Err(TensorError::InvalidAxis { axis, rank: r });
        }
        if axis + 1 == r {
            return Ok(self.softmax());
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.remove(axis);
        axes.push(axis);
        let inv = kernel::inverse_axes(&axes);
        self.permute(&axes)?.softmax().permute(&inv)
    }

    /// Softmax over the last axis with disallowed entries forced to exactly
    /// zero. Rows with no allowed entry come out all zero.
    pub fn softmax_masked(self, mask: &AttnMask) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        let r = v.rank();
        if r < 2 {
            return Err(mismatch("softmax_masked", v.shape(), &[mask.q, mask.k]));
        }
        let (q, k) = last_two(v.shape());
        let outer: usize = v.shape()[..r - 2].iter().product();
        if q != mask.q || k != mask.k || mask.batch == 0 || !outer.is_multiple_of(mask.batch) {
            return Err(mismatch("softmax_masked", v.shape(), &[mask.batch, mask.q, mask.k]));
        }
        let per_item = outer / mask.batch;
        let mut data = v.data().to_vec();
        for (o, block) in data.chunks_mut(q * k).enumerate() {
            let b = o / per_item;
            for (qi, row) in block.chunks_mut(k).enumerate() {
                let start = (b * q + qi) * k;
                softmax_row(row, Some(&mask.allowed[start..start + k]));
            }
        }
        Ok(self.tape.push(
            Tensor {
                shape: v.shape().to_vec(),
                data,
            },
            Op::Softmax(self.id),
            &[self.id],
        ))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies `gamma` and `beta` (both shaped `[d]`).
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>, TensorError> {
        let (x, g, b) = (self.value(), gamma.value(), beta.value());
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| mismatch("layer_norm", x.shape(), g.shape()))?;
        if g.shape() != [d] || b.shape() != [d] {
            return Err(mismatch("layer_norm", x.shape(), g.shape()));
        }
        let rows = x.len() / d.max(1);
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; x.len()];
        for (r, xr) in x.data().chunks(d).enumerate() {
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (xr[j] - mean) * inv;
                xhat[r * d + j] = h;
                data[r * d + j] = h * g.data()[j] + b.data()[j];
            }
        }
        Ok(self.tape.push(
            Tensor {
                shape: x.shape().to_vec(),
                data,
            },
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            &[self.id, gamma.id, beta.id],
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let m = v.sum() / v.len() as f64;
        self.tape.push(Tensor::scalar(m), Op::MeanAll(self.id), &[self.id])
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        if axis >= v.rank() {
            return Err(TensorError::InvalidAxis { axis, rank: v.rank() });
        }
        let full = v.shape()[axis];
        if start + len > full {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                len: full,
            });
        }
        let outer: usize = v.shape()[..axis].iter().product();
        let inner: usize = v.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. A zero rate returns `self` unchanged.
    pub fn dropout<R: Rng + ?Sized>(self, rate: f64, rng: &mut R) -> Var<'t> {
        if rate <= 0.0 {
            return self;
        }
        let v = self.value();
        let keep = if rate >= 1.0 { 0.0 } else { 1.0 / (1.0 - rate) };
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.tape.push(
            Tensor {
                shape: v.shape().to_vec(),
                data,
            },
            Op::Dropout(self.id, mask),
            &[self.id],
        )
    }

    /// Weighted mean negative log-likelihood of `targets` under the softmax
    /// of each row of `self` (last axis = classes). Rows with weight zero are
    /// ignored; the mean divides by the total weight.
    pub fn cross_entropy(self, targets: &[usize], weights: &[f64]) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        let width = *v
            .shape()
            .last()
            .ok_or_else(|| mismatch("cross_entropy", v.shape(), &[]))?;
        let rows = v.len() / width.max(1);
        if targets.len() != rows || weights.len() != rows {
            return Err(mismatch("cross_entropy", v.shape(), &[targets.len()]));
        }
        let mut probs = v.data().to_vec();
        let mut total = 0.0;
        let denom: f64 = weights.iter().sum();
        for (r, row) in probs.chunks_mut(width).enumerate() {
            let t = targets[r];
            if t >= width {
                return Err(TensorError::IndexOutOfRange { index: t, len: width });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            if weights[r] != 0.0 {
                total += weights[r] * (lse - row[t]);
            }
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let loss = if denom > 0.0 { total / denom } else { 0.0 };
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                denom,
            },
            &[self.id],
        ))
    }
}

fn softmax_row(row: &mut [f64], allowed: Option<&[bool]>) {
    let ok = |j: usize| allowed.is_none_or(|a| a[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in row.iter().enumerate() {
        if ok(j) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        if ok(j) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
