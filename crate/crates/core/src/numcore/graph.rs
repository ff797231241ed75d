//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape index is already a
//! topological order and [`Graph::backward`] walks it in reverse.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, Tensor};
use super::Float;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, F),
    AddScalar(Var),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Concat(Vec<Var>, usize),
    Narrow { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, F),
    Exp(Var),
    SoftStaircase(Var),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Softmax(Var, usize),
    MaskedSoftmax(Var, Vec<usize>),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<F>, total: F },
}

#[derive(Debug)]
struct Node<F: Float> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients of a scalar output with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient of `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Recording tape for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph<F: Float = f32> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Splits a shape around `axis` into (outer, axis_len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn soft_staircase_scalar<F: Float>(x: F) -> (F, F) {
    let twenty = F::from_f64(20.0);
    let half = F::from_f64(0.5);
    let fl = x.floor();
    let s = sigmoid(twenty * (x - half - fl));
    (fl + s, twenty * s * (F::one() - s))
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant: gradients are never propagated into it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input whose gradient can be read after `backward`.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a parameter on the tape; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut value = store.get(id).tensor.clone();
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok(Tensor::from_parts(ta.shape().to_vec(), data));
        }
        let out = broadcast_shape(name, ta.shape(), tb.shape())?;
        let sa = broadcast_strides(ta.shape(), &out);
        let sb = broadcast_strides(tb.shape(), &out);
        let mut data = vec![F::zero(); out.iter().product()];
        let (da, db) = (ta.data(), tb.data());
        for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(da[ia], db[ib]));
        Ok(Tensor::from_parts(out, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|v| *v == F::zero()) {
            return Err(Error::DivisionByZero { op: "div" });
        }
        let t = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), &[a, b]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| -x);
        self.push(t, Op::Neg(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let t = self.map(a, |x| x * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let t = self.map(a, |x| x + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    /// `1 - a`, used by gated interpolations.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, F::one())
    }

    fn map(&self, a: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let ta = self.value(a);
        Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.tanh());
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(F::zero()));
        self.push(t, Op::Relu(a), &[a])
    }

    /// Leaky ReLU with the given negative-side slope.
    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let t = self.map(a, |x| if x > F::zero() { x } else { x * slope });
        self.push(t, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.exp());
        self.push(t, Op::Exp(a), &[a])
    }

    /// `floor(x) + sigmoid(20 (x - 0.5 - floor(x)))`, elementwise.
    pub fn soft_staircase(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| soft_staircase_scalar(x).0);
        self.push(t, Op::SoftStaircase(a), &[a])
    }

    /// 2-D matrix product `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m, k, n, F::one(), ta.data(), k as isize, 1, tb.data(), n as isize, 1, F::zero(),
            &mut out, n as isize, 1,
        );
        let t = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched matrix product `[B, m, k] x [B, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); bs * m * n];
        for i in 0..bs {
            F::gemm(
                m,
                k,
                n,
                F::one(),
                &ta.data()[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
                &tb.data()[i * k * n..(i + 1) * k * n],
                n as isize,
                1,
                F::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
            );
        }
        let t = Tensor::from_parts(vec![bs, m, n], out);
        Ok(self.push(t, Op::Bmm(a, b), &[a, b]))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::from_parts(shape, data);
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::invalid(format!(
                "narrow [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::from_parts(shape, data);
        Ok(self.push(t, Op::Narrow { input: a, axis, start }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.reduce(a, axis, false)?;
        Ok(self.push(t, Op::Sum(a, axis), &[a]))
    }

    /// Mean along `axis`, keeping it with size 1.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.reduce(a, axis, true)?;
        Ok(self.push(t, Op::Mean(a, axis), &[a]))
    }

    fn reduce(&self, a: Var, axis: usize, average: bool) -> Result<Tensor<F>> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::invalid(format!("reduce axis {axis} out of range for {s:?}")));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(a).data();
        let mut data = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * n + j) * inner + i];
                }
            }
        }
        if average {
            let inv = F::one() / F::from_usize(n);
            data.iter_mut().for_each(|v| *v *= inv);
        }
        let mut shape = s;
        shape[axis] = 1;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Sum of all entries as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a), &[a])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::invalid(format!("softmax axis {axis} out of range for {s:?}")));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(a).data();
        let mut data = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    data[at(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    data[at(j)] = data[at(j)] / z;
                }
            }
        }
        let t = Tensor::from_parts(s, data);
        Ok(self.push(t, Op::Softmax(a, axis), &[a]))
    }

    /// Row-wise softmax of a `[B, S]` matrix where row `b` only spans its
    /// first `lengths[b]` columns; the remainder is exactly zero.
    pub fn masked_softmax(&mut self, a: Var, lengths: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != lengths.len() {
            return Err(shape_err("masked_softmax", &s, &[lengths.len()]));
        }
        let cols = s[1];
        if lengths.iter().any(|&l| l == 0 || l > cols) {
            return Err(Error::invalid("masked_softmax lengths must be in [1, columns]"));
        }
        let src = self.value(a).data();
        let mut data = vec![F::zero(); src.len()];
        for (b, &len) in lengths.iter().enumerate() {
            let row = &src[b * cols..b * cols + len];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let out = &mut data[b * cols..b * cols + len];
            let mut z = F::zero();
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - max).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o = *o / z);
        }
        let t = Tensor::from_parts(s, data);
        Ok(self.push(t, Op::MaskedSoftmax(a, lengths.to_vec()), &[a]))
    }

    /// Row lookup: `table[ids[i], :]` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(shape_err("embedding", &s, &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= s[0]) {
            return Err(Error::invalid(format!("embedding id {bad} out of range {}", s[0])));
        }
        let src = self.value(table).data();
        let dim = s[1];
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let t = Tensor::from_parts(vec![ids.len(), dim], data);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Weighted mean cross-entropy of `[N, V]` logits against class ids.
    ///
    /// Rows with weight zero (padding) contribute nothing; the result is
    /// `sum_i w_i * nll_i / sum_i w_i`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || targets.len() != weights.len() {
            return Err(shape_err("cross_entropy", &s, &[targets.len(), weights.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(Error::invalid(format!("target class {bad} out of range {}", s[1])));
        }
        let total: F = weights.iter().copied().sum();
        if total <= F::zero() {
            return Err(Error::DivisionByZero { op: "cross_entropy" });
        }
        let v = s[1];
        let src = self.value(logits).data();
        let mut loss = F::zero();
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == F::zero() {
                continue;
            }
            let row = &src[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
            loss += w * (lse - row[t]);
        }
        let t = Tensor::scalar(loss / total);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                total,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>> {
        if self.value(output).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![F::one()]);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds parameter gradients from `grads` into the store's accumulators.
    pub fn accumulate_param_grads(&self, grads: &Gradients<F>, store: &mut ParamStore<F>) {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).tensor.accumulate_grad(g);
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn unary_back(
        &self,
        grads: &mut [Option<Vec<F>>],
        input: Var,
        g: &[F],
        local: impl Fn(usize) -> F,
    ) {
        if let Some(ga) = self.slot(grads, input) {
            for (k, (acc, &gk)) in ga.iter_mut().zip(g).enumerate() {
                *acc += gk * local(k);
            }
        }
    }

    /// Accumulates a broadcast binary op's gradient into both operands.
    /// `da(o, ia, ib)` and `db(o, ia, ib)` give the local partials.
    #[allow(clippy::too_many_arguments)]
    fn binary_back(
        &self,
        grads: &mut [Option<Vec<F>>],
        out_shape: &[usize],
        a: Var,
        b: Var,
        g: &[F],
        da: impl Fn(usize, usize) -> F,
        db: impl Fn(usize, usize) -> F,
    ) {
        let (sa_shape, sb_shape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let sa = broadcast_strides(&sa_shape, out_shape);
        let sb = broadcast_strides(&sb_shape, out_shape);
        if let Some(ga) = self.slot(grads, a) {
            for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| ga[ia] += g[o] * da(ia, ib));
        }
        if let Some(gb) = self.slot(grads, b) {
            for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| gb[ib] += g[o] * db(ia, ib));
        }
    }

    fn backward_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.binary_back(grads, out.shape(), *a, *b, g, |_, _| F::one(), |_, _| F::one())
            }
            Op::Sub(a, b) => {
                self.binary_back(grads, out.shape(), *a, *b, g, |_, _| F::one(), |_, _| -F::one())
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.binary_back(grads, out.shape(), *a, *b, g, |_, ib| vb[ib], |ia, _| va[ia])
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.binary_back(
                    grads,
                    out.shape(),
                    *a,
                    *b,
                    g,
                    |_, ib| F::one() / vb[ib],
                    |ia, ib| -va[ia] / (vb[ib] * vb[ib]),
                )
            }
            Op::Neg(a) => self.unary_back(grads, *a, g, |_| -F::one()),
            Op::Scale(a, c) => self.unary_back(grads, *a, g, |_| *c),
            Op::AddScalar(a) | Op::Reshape(a) => self.unary_back(grads, *a, g, |_| F::one()),
            Op::Tanh(a) => {
                let y = out.data();
                self.unary_back(grads, *a, g, |k| F::one() - y[k] * y[k])
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                self.unary_back(grads, *a, g, |k| y[k] * (F::one() - y[k]))
            }
            Op::Exp(a) => {
                let y = out.data();
                self.unary_back(grads, *a, g, |k| y[k])
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.unary_back(grads, *a, g, |k| {
                    if x[k] > F::zero() {
                        F::one()
                    } else {
                        F::zero()
                    }
                })
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                self.unary_back(grads, *a, g, |k| if x[k] > F::zero() { F::one() } else { *slope })
            }
            Op::SoftStaircase(a) => {
                let x = self.value(*a).data();
                self.unary_back(grads, *a, g, |k| soft_staircase_scalar(x[k]).1)
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC B^T
                    F::gemm(
                        m, n, k, F::one(), g, n as isize, 1, tb.data(), 1, n as isize, F::one(),
                        ga, k as isize, 1,
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = A^T dC
                    F::gemm(
                        k, m, n, F::one(), ta.data(), 1, k as isize, g, n as isize, 1, F::one(),
                        gb, n as isize, 1,
                    );
                }
            }
            Op::Bmm(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let s = ta.shape();
                let (bs, m, k, n) = (s[0], s[1], s[2], tb.shape()[2]);
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..bs {
                        F::gemm(
                            m,
                            n,
                            k,
                            F::one(),
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            1,
                            n as isize,
                            F::one(),
                            &mut ga[i * m * k..(i + 1) * m * k],
                            k as isize,
                            1,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..bs {
                        F::gemm(
                            k,
                            m,
                            n,
                            F::one(),
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            1,
                            k as isize,
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            F::one(),
                            &mut gb[i * k * n..(i + 1) * k * n],
                            n as isize,
                            1,
                        );
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if let Some(gp) = self.slot(grads, *p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut gp[o * len * inner..(o + 1) * len * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += *s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let in_shape = self.shape(*input).to_vec();
                let (outer, n, inner) = split_axis(&in_shape, *axis);
                let len = out.shape()[*axis];
                if let Some(gi) = self.slot(grads, *input) {
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let dst = &mut gi[base..base + len * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let in_shape = self.shape(*a).to_vec();
                let (outer, n, inner) = split_axis(&in_shape, *axis);
                let scale = match node.op {
                    Op::Mean(..) => F::one() / F::from_usize(n),
                    _ => F::one(),
                };
                if let Some(ga) = self.slot(grads, *a) {
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                ga[(o * n + j) * inner + i] += g[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => self.unary_back(grads, *a, &vec![g[0]; self.value(*a).numel()], |_| F::one()),
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: F = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                ga[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax(a, lengths) => {
                let cols = out.shape()[1];
                let y = out.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for (b, &len) in lengths.iter().enumerate() {
                        let r = b * cols..b * cols + len;
                        let dot: F = r.clone().map(|k| g[k] * y[k]).sum();
                        for k in r {
                            ga[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = out.shape()[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            gt[id * dim + c] += g[r * dim + c];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                total,
            } => {
                let v = self.shape(*logits)[1];
                let src = self.value(*logits).data();
                if let Some(gl) = self.slot(grads, *logits) {
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == F::zero() {
                            continue;
                        }
                        let row = &src[i * v..(i + 1) * v];
                        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                        let z: F = row.iter().map(|&x| (x - max).exp()).sum();
                        let coef = g[0] * w / *total;
                        for (j, &x) in row.iter().enumerate() {
                            let p = (x - max).exp() / z;
                            let onehot = if j == t { F::one() } else { F::zero() };
                            gl[i * v + j] += coef * (p - onehot);
                        }
                    }
                }
            }
        }
    }
}
