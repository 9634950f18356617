//! Recording of forward computations and reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so insertion order is a
//! topological order and the backward pass is a single reverse sweep.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{MatMulPlan, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Variable,
    Param,
    MatMul(Var, Var, MatMulPlan),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<T> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    TransposeLast2(Var),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, for every leaf that requires them.
pub struct Gradients<T> {
    leaves: HashMap<Var, Tensor<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }

    /// Gradient for every parameter of `store`, zeros for parameters the
    /// loss does not depend on.
    pub fn for_params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .iter()
            .map(|(id, _, value)| {
                self.params
                    .get(&id)
                    .and_then(|v| self.leaves.get(v))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(value.shape()))
            })
            .collect()
    }
}

/// Repeat count when `rhs` broadcasts over the leading axes of `lhs`.
fn broadcast_repeats(op: &str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    let ln: usize = lhs.iter().product();
    let rn: usize = rhs.iter().product();
    if lhs == rhs {
        Ok(1)
    } else if rn == 1 || (rhs.len() < lhs.len() && lhs.ends_with(rhs)) {
        Ok(ln / rn)
    } else {
        Err(Error::shape(op, lhs, rhs))
    }
}

/// Sum `g` (shaped like the broadcast output) back onto an operand of `n`
/// elements.
fn reduce_broadcast<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![T::zero(); n];
    for chunk in g.chunks(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Outer/inner split of a shape around `axis`: (outer, axis size, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op: &str, value: Tensor<T>, node_op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric { op: op.to_string() });
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that is not differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("constant", value, Op::Constant, false)
    }

    /// Leaf that gradients are reported for.
    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("variable", value, Op::Variable, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let v = self.push("param", store.get(id).clone(), Op::Param, true)?;
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = MatMulPlan::new(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); plan.out_len()];
        plan.forward(self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::from_parts(plan.out_shape.clone(), out);
        let rg = self.rg(&[a, b]);
        self.push("matmul", value, Op::MatMul(a, b, plan), rg)
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        broadcast_repeats(name, av.shape(), bv.shape())?;
        let n = bv.len();
        let data = av
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(bv.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        self.push(name, value, op, rg)
    }

    /// `a + b`, with `b` broadcast over leading axes of `a` (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, name: &str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(name, value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let d = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        self.push("softmax", value, Op::Softmax(a), rg)
    }

    /// Zero-mean, unit-variance normalization over the last axis.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Result<Var> {
        let av = self.value(a);
        let d = av.last_dim();
        let dn = T::from_usize(d).expect("dimension fits scalar");
        let mut data = av.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / d);
        for row in data.chunks_mut(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        self.push("layer_norm", value, Op::LayerNorm { input: a, inv_std }, rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let value = Tensor::from_parts(out_shape, data);
        let rg = self.rg(inputs);
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let (outer, size, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * size * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_parts(out_shape, data);
        let rg = self.rg(&[a]);
        self.push("slice", value, Op::Slice { input: a, axis, start }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push("reshape", value, Op::Reshape(a), rg)
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("transpose", &shape, &[]));
        }
        let value = transpose_last2(self.value(a));
        let rg = self.rg(&[a]);
        self.push("transpose", value, Op::TransposeLast2(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push("sum", value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / T::from_usize(t.len()).expect("length fits scalar"));
        let rg = self.rg(&[a]);
        self.push("mean", value, Op::Mean(a), rg)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut leaves = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(g) = grads[idx].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let send = |grads: &mut Vec<Option<Tensor<T>>>, v: Var, d: Tensor<T>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Variable | Op::Param => {
                    leaves.insert(Var(idx), g);
                }
                Op::MatMul(a, b, plan) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let need_a = self.nodes[a.0].requires_grad;
                    let need_b = self.nodes[b.0].requires_grad;
                    let mut da = need_a.then(|| vec![T::zero(); av.len()]);
                    let mut db = need_b.then(|| vec![T::zero(); bv.len()]);
                    plan.backward(av.data(), bv.data(), g.data(), da.as_deref_mut(), db.as_deref_mut());
                    if let Some(da) = da {
                        send(&mut grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                    }
                    if let Some(db) = db {
                        send(&mut grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let bv = self.value(*b);
                    let mut db = reduce_broadcast(g.data(), bv.len());
                    if matches!(node.op, Op::Sub(..)) {
                        db.iter_mut().for_each(|v| *v = -*v);
                    }
                    send(&mut grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                    send(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let n = bv.len();
                    let da: Vec<T> = g
                        .data()
                        .chunks(n)
                        .flat_map(|c| c.iter().zip(bv.data()).map(|(&gi, &bi)| gi * bi))
                        .collect();
                    let prod: Vec<T> = g.data().iter().zip(av.data()).map(|(&gi, &ai)| gi * ai).collect();
                    send(&mut grads, *b, Tensor::from_parts(bv.shape().to_vec(), reduce_broadcast(&prod, n)));
                    send(&mut grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let n = bv.len();
                    let da: Vec<T> = g
                        .data()
                        .chunks(n)
                        .flat_map(|c| c.iter().zip(bv.data()).map(|(&gi, &bi)| gi / bi))
                        .collect();
                    // d(a/b)/db = -y/b
                    let prod: Vec<T> = g
                        .data()
                        .chunks(n)
                        .zip(y.data().chunks(n))
                        .flat_map(|(gc, yc)| {
                            gc.iter()
                                .zip(yc)
                                .zip(bv.data())
                                .map(|((&gi, &yi), &bi)| -gi * yi / bi)
                        })
                        .collect();
                    send(&mut grads, *b, Tensor::from_parts(bv.shape().to_vec(), reduce_broadcast(&prod, n)));
                    send(&mut grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(&mut grads, *a, g.map(|v| v * c));
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    send(&mut grads, *a, Tensor::from_parts(shape, g.into_data()));
                }
                Op::Tanh(a) => send(&mut grads, *a, g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi))),
                Op::Sigmoid(a) => send(&mut grads, *a, g.zip_map(y, |gi, yi| gi * yi * (T::one() - yi))),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    send(&mut grads, *a, g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { T::zero() }))
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    send(&mut grads, *a, g.zip_map(x, |gi, xi| gi * sigmoid(xi)))
                }
                Op::Exp(a) => send(&mut grads, *a, g.zip_map(y, |gi, yi| gi * yi)),
                Op::Log(a) => {
                    let x = self.value(*a);
                    send(&mut grads, *a, g.zip_map(x, |gi, xi| gi / xi))
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    let two = T::lit(2.0);
                    send(&mut grads, *a, g.zip_map(x, |gi, xi| two * gi * xi))
                }
                Op::Softmax(a) => {
                    let d = y.last_dim();
                    let mut dx = Vec::with_capacity(y.len());
                    for (gr, yr) in g.data().chunks(d).zip(y.data().chunks(d)) {
                        let dot: T = gr.iter().zip(yr).map(|(&gi, &yi)| gi * yi).sum();
                        dx.extend(gr.iter().zip(yr).map(|(&gi, &yi)| yi * (gi - dot)));
                    }
                    send(&mut grads, *a, Tensor::from_parts(y.shape().to_vec(), dx));
                }
                Op::LayerNorm { input, inv_std } => {
                    let d = y.last_dim();
                    let dn = T::from_usize(d).expect("dimension fits scalar");
                    let mut dx = Vec::with_capacity(y.len());
                    for ((gr, yr), &inv) in g.data().chunks(d).zip(y.data().chunks(d)).zip(inv_std) {
                        let mean_g = gr.iter().copied().sum::<T>() / dn;
                        let mean_gy = gr.iter().zip(yr).map(|(&gi, &yi)| gi * yi).sum::<T>() / dn;
                        dx.extend(
                            gr.iter()
                                .zip(yr)
                                .map(|(&gi, &yi)| inv * (gi - mean_g - yi * mean_gy)),
                        );
                    }
                    send(&mut grads, *input, Tensor::from_parts(y.shape().to_vec(), dx));
                }
                Op::Concat { inputs, axis } => {
                    let (outer, _, inner) = axis_split(y.shape(), *axis);
                    let total = y.shape()[*axis];
                    let mut offset = 0;
                    for &v in inputs {
                        let shape = self.shape(v).to_vec();
                        let w = shape[*axis] * inner;
                        let mut part = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            part.extend_from_slice(&g.data()[base..base + w]);
                        }
                        offset += w;
                        send(&mut grads, v, Tensor::from_parts(shape, part));
                    }
                }
                Op::Slice { input, axis, start } => {
                    let shape = self.shape(*input).to_vec();
                    let (outer, size, inner) = axis_split(&shape, *axis);
                    let len = y.shape()[*axis];
                    let mut dx = vec![T::zero(); shape.iter().product()];
                    for o in 0..outer {
                        let dst = o * size * inner + start * inner;
                        dx[dst..dst + len * inner]
                            .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                    }
                    send(&mut grads, *input, Tensor::from_parts(shape, dx));
                }
                Op::TransposeLast2(a) => send(&mut grads, *a, transpose_last2(&g)),
                Op::Sum(a) => {
                    let g0 = g.item();
                    send(&mut grads, *a, Tensor::full(self.shape(*a), g0));
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let n = T::from_usize(shape.iter().product()).expect("length fits scalar");
                    send(&mut grads, *a, Tensor::full(shape, g.item() / n));
                }
            }
        }
        Ok(Gradients {
            leaves,
            params: self.param_vars.clone(),
        })
    }
}

fn transpose_last2<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let shape = t.shape();
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let batch = t.len() / (rows * cols);
    let src = t.data();
    let mut data = vec![T::zero(); t.len()];
    for b in 0..batch {
        let off = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                data[off + j * rows + i] = src[off + i * cols + j];
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(r - 2, r - 1);
    Tensor::from_parts(out_shape, data)
}
