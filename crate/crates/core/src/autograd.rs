//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every backward rule is written in terms of differentiable [`Var`] ops, so
//! gradients can themselves be differentiated (`create_graph = true`). The
//! discriminator's R1 penalty relies on this.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::real::Real;
use crate::tensor::{ConvGeom, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

trait Backward<T: Real> {
    /// Gradients for each input; entries with `needs[i] == false` may be `None`.
    fn backward(&self, inputs: &[Var<T>], out: &Var<T>, grad: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>>;
}

struct GradFn<T: Real> {
    inputs: Vec<Var<T>>,
    op: Box<dyn Backward<T>>,
}

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// A tensor participating in the computation graph.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(self.0.clone())
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.0.id, self.0.value.shape())
    }
}

impl<T: Real> Var<T> {
    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(Node { id: next_id(), value, requires_grad: true, grad_fn: None }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node { id: next_id(), value, requires_grad: false, grad_fn: None }))
    }

    fn from_op(value: Tensor<T>, inputs: Vec<Var<T>>, op: impl Backward<T> + 'static) -> Self {
        if inputs.iter().any(|v| v.requires_grad()) {
            Var(Rc::new(Node {
                id: next_id(),
                value,
                requires_grad: true,
                grad_fn: Some(GradFn { inputs, op: Box::new(op) }),
            }))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a + b);
        Self::from_op(v, vec![self.clone(), other.clone()], AddOp)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a - b);
        Self::from_op(v, vec![self.clone(), other.clone()], SubOp)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a * b);
        Self::from_op(v, vec![self.clone(), other.clone()], MulOp)
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn scale(&self, c: T) -> Self {
        let v = self.value().map(|a| a * c);
        Self::from_op(v, vec![self.clone()], ScaleOp(c))
    }

    pub fn add_scalar(&self, c: T) -> Self {
        let v = self.value().map(|a| a + c);
        Self::from_op(v, vec![self.clone()], AddScalarOp)
    }

    /// Multiplies by a tensor that is treated as a constant.
    pub fn mul_const(&self, m: &Tensor<T>) -> Self {
        let v = self.value().zip_map(m, |a, b| a * b);
        Self::from_op(v, vec![self.clone()], MulConstOp(m.clone()))
    }

    /// `x + bias` over axis 1 of `[B, C, ...]`, optionally followed by a
    /// leaky ReLU, in a single pass.
    pub fn bias_act(&self, bias: &Self, slope: Option<T>) -> Self {
        let shape = self.shape();
        let ch = shape[1];
        assert_eq!(bias.shape(), &[ch], "bias must be [{ch}] for input {shape:?}");
        let inner: usize = shape[2..].iter().product();
        let b = bias.value().data();
        let mut out = self.value().data().to_vec();
        for (k, chunk) in out.chunks_mut(inner.max(1)).enumerate() {
            let bc = b[k % ch];
            match slope {
                Some(s) => chunk.iter_mut().for_each(|v| {
                    let a = *v + bc;
                    *v = if a > T::zero() { a } else { a * s };
                }),
                None => chunk.iter_mut().for_each(|v| *v += bc),
            }
        }
        let v = Tensor::from_vec(shape, out);
        let mut bshape = alloc::vec![1; shape.len()];
        bshape[1] = ch;
        Self::from_op(v, vec![self.clone(), bias.clone()], BiasActOp { slope, bshape })
    }

    pub fn leaky_relu(&self, slope: T) -> Self {
        let mask = self.value().map(|a| if a > T::zero() { T::one() } else { slope });
        self.mul_const(&mask)
    }

    pub fn abs(&self) -> Self {
        let sign = self.value().map(|a| {
            if a > T::zero() {
                T::one()
            } else if a < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        self.mul_const(&sign)
    }

    pub fn exp(&self) -> Self {
        let v = self.value().map(|a| a.exp());
        Self::from_op(v, vec![self.clone()], ExpOp)
    }

    pub fn ln(&self) -> Self {
        let v = self.value().map(|a| a.ln());
        Self::from_op(v, vec![self.clone()], LnOp)
    }

    pub fn sin(&self) -> Self {
        let v = self.value().map(|a| a.sin());
        Self::from_op(v, vec![self.clone()], SinOp)
    }

    pub fn cos(&self) -> Self {
        let v = self.value().map(|a| a.cos());
        Self::from_op(v, vec![self.clone()], CosOp)
    }

    pub fn powf(&self, p: T) -> Self {
        let v = self.value().map(|a| a.powf(p));
        Self::from_op(v, vec![self.clone()], PowOp(p))
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    pub fn sigmoid(&self) -> Self {
        let v = self.value().map(sigmoid);
        Self::from_op(v, vec![self.clone()], SigmoidOp)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Self {
        let v = self.value().map(softplus);
        Self::from_op(v, vec![self.clone()], SoftplusOp)
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Self {
        let v = self.value().reshape(shape);
        Self::from_op(v, vec![self.clone()], ReshapeOp(self.shape().to_vec()))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self.value().broadcast_to(shape);
        Self::from_op(v, vec![self.clone()], BroadcastOp(self.shape().to_vec()))
    }

    pub fn sum_to(&self, shape: &[usize]) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self.value().sum_to(shape);
        Self::from_op(v, vec![self.clone()], SumToOp(self.shape().to_vec()))
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&self) -> Self {
        let ones = vec![1; self.shape().len()];
        self.sum_to(&ones).reshape(&[1])
    }

    pub fn mean_all(&self) -> Self {
        let n = self.value().numel();
        self.sum_all().scale(T::one() / T::from_f64(n as f64))
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Self {
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        self.sum_to(&shape)
    }

    /// Adds `other` after broadcasting it to `self`'s shape.
    pub fn add_bcast(&self, other: &Self) -> Self {
        self.add(&other.broadcast_to(self.shape()))
    }

    pub fn mul_bcast(&self, other: &Self) -> Self {
        self.mul(&other.broadcast_to(self.shape()))
    }

    pub fn transpose_last2(&self) -> Self {
        let v = self.value().transpose_last2();
        Self::from_op(v, vec![self.clone()], TransposeOp)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let v = self.value().narrow(axis, start, len);
        let full = self.shape()[axis];
        Self::from_op(v, vec![self.clone()], NarrowOp { axis, start, full })
    }

    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Self {
        let v = self.value().pad_axis(axis, start, full);
        let len = self.shape()[axis];
        Self::from_op(v, vec![self.clone()], PadOp { axis, start, len })
    }

    pub fn concat(parts: &[Var<T>], axis: usize) -> Self {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let v = Tensor::concat(&tensors, axis);
        let sizes = parts.iter().map(|p| p.shape()[axis]).collect();
        Self::from_op(v, parts.to_vec(), ConcatOp { axis, sizes })
    }

    pub fn index_select_last(&self, idx: &Rc<Vec<usize>>) -> Self {
        let v = self.value().index_select_last(idx);
        let n = *self.shape().last().unwrap();
        Self::from_op(v, vec![self.clone()], IndexSelectOp { idx: idx.clone(), n })
    }

    pub fn index_add_last(&self, idx: &Rc<Vec<usize>>, n: usize) -> Self {
        let v = self.value().index_add_last(idx, n);
        Self::from_op(v, vec![self.clone()], IndexAddOp { idx: idx.clone() })
    }

    // ---- linear algebra ----------------------------------------------

    /// Batched matrix product, see [`Tensor::bmm`].
    pub fn bmm(a: &Self, b: &Self, ta: bool, tb: bool) -> Self {
        let v = Tensor::bmm(a.value(), b.value(), ta, tb);
        Self::from_op(v, vec![a.clone(), b.clone()], BmmOp { ta, tb })
    }

    pub fn im2col(&self, geom: ConvGeom) -> Self {
        let v = self.value().im2col(&geom);
        let channels = self.shape()[1];
        Self::from_op(v, vec![self.clone()], Im2ColOp { geom, channels })
    }

    pub fn col2im(&self, geom: ConvGeom, channels: usize) -> Self {
        let v = self.value().col2im(&geom, channels);
        Self::from_op(v, vec![self.clone()], Col2ImOp { geom })
    }

    pub fn avg_pool2(&self) -> Self {
        let v = self.value().avg_pool2();
        Self::from_op(v, vec![self.clone()], PoolOp)
    }

    pub fn avg_unpool2(&self) -> Self {
        let v = self.value().avg_unpool2();
        Self::from_op(v, vec![self.clone()], UnpoolOp)
    }

    pub fn softmax_last(&self) -> Self {
        let v = self.value().softmax_last();
        Self::from_op(v, vec![self.clone()], SoftmaxOp)
    }
}

pub(crate) fn sigmoid<T: Real>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(a: T) -> T {
    // max(a, 0) + ln(1 + e^{-|a|})
    a.max(T::zero()) + (-a.abs()).exp().ln_1p()
}

/// Gradients of `output` (seeded with ones) with respect to `wrt`.
///
/// With `create_graph` the returned gradients are themselves differentiable.
/// Inputs that `output` does not depend on get `None`.
pub fn grad<T: Real>(output: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Vec<Option<Var<T>>> {
    let seed = Var::constant(Tensor::ones(output.shape()));
    grad_with_seed(output, &seed, wrt, create_graph)
}

pub fn grad_with_seed<T: Real>(
    output: &Var<T>,
    seed: &Var<T>,
    wrt: &[&Var<T>],
    create_graph: bool,
) -> Vec<Option<Var<T>>> {
    let targets: BTreeSet<u64> = wrt.iter().map(|v| v.id()).collect();
    if !output.requires_grad() {
        return vec![None; wrt.len()];
    }

    // Reachable graph, keyed by id (children always have larger ids).
    let mut nodes: BTreeMap<u64, Var<T>> = BTreeMap::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || nodes.contains_key(&v.id()) {
            continue;
        }
        if let Some(gf) = &v.0.grad_fn {
            stack.extend(gf.inputs.iter().cloned());
        }
        nodes.insert(v.id(), v);
    }

    // Nodes from which some target is reachable.
    let mut relevant: BTreeSet<u64> = BTreeSet::new();
    for (id, v) in nodes.iter() {
        let hit = targets.contains(id)
            || v.0.grad_fn.as_ref().is_some_and(|gf| gf.inputs.iter().any(|i| relevant.contains(&i.id())));
        if hit {
            relevant.insert(*id);
        }
    }

    let mut grads: BTreeMap<u64, Var<T>> = BTreeMap::new();
    grads.insert(output.id(), if create_graph { seed.clone() } else { seed.detach() });
    let mut found: BTreeMap<u64, Var<T>> = BTreeMap::new();

    for (id, node) in nodes.iter().rev() {
        let Some(g) = grads.remove(id) else { continue };
        if targets.contains(id) {
            found.insert(*id, g.clone());
        }
        let Some(gf) = &node.0.grad_fn else { continue };
        let needs: Vec<bool> = gf.inputs.iter().map(|i| relevant.contains(&i.id())).collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let input_grads = if create_graph {
            gf.op.backward(&gf.inputs, node, &g, &needs)
        } else {
            let inputs: Vec<Var<T>> = gf.inputs.iter().map(|v| v.detach()).collect();
            gf.op.backward(&inputs, &node.detach(), &g.detach(), &needs)
        };
        for ((input, ig), need) in gf.inputs.iter().zip(input_grads).zip(&needs) {
            let (Some(ig), true) = (ig, *need) else { continue };
            debug_assert_eq!(ig.shape(), input.shape(), "gradient shape mismatch");
            let acc = match grads.remove(&input.id()) {
                Some(prev) => prev.add(&ig),
                None => ig,
            };
            grads.insert(input.id(), acc);
        }
    }
    wrt.iter().map(|v| found.get(&v.id()).cloned()).collect()
}

// ---- backward rules ----------------------------------------------------

fn pick<T: Real>(needs: &[bool], i: usize, f: impl FnOnce() -> Var<T>) -> Option<Var<T>> {
    needs[i].then(f)
}

struct AddOp;
impl<T: Real> Backward<T> for AddOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![pick(needs, 0, || g.clone()), pick(needs, 1, || g.clone())]
    }
}

struct SubOp;
impl<T: Real> Backward<T> for SubOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![pick(needs, 0, || g.clone()), pick(needs, 1, || g.neg())]
    }
}

struct MulOp;
impl<T: Real> Backward<T> for MulOp {
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![pick(needs, 0, || g.mul(&x[1])), pick(needs, 1, || g.mul(&x[0]))]
    }
}

struct ScaleOp<T>(T);
impl<T: Real> Backward<T> for ScaleOp<T> {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.scale(self.0))]
    }
}

struct AddScalarOp;
impl<T: Real> Backward<T> for AddScalarOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.clone())]
    }
}

struct MulConstOp<T>(Tensor<T>);
impl<T: Real> Backward<T> for MulConstOp<T> {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.mul_const(&self.0))]
    }
}

struct BiasActOp<T> {
    slope: Option<T>,
    bshape: Vec<usize>,
}
impl<T: Real> Backward<T> for BiasActOp<T> {
    fn backward(&self, _: &[Var<T>], out: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let gm = match self.slope {
            Some(s) => g.mul_const(&out.value().map(|v| if v > T::zero() { T::one() } else { s })),
            None => g.clone(),
        };
        let gb = pick(needs, 1, || gm.sum_to(&self.bshape).reshape(&[self.bshape[1]]));
        vec![pick(needs, 0, || gm.clone()), gb]
    }
}

struct ExpOp;
impl<T: Real> Backward<T> for ExpOp {
    fn backward(&self, _: &[Var<T>], out: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.mul(out))]
    }
}

struct LnOp;
impl<T: Real> Backward<T> for LnOp {
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.mul(&x[0].powf(-T::one())))]
    }
}

struct SinOp;
impl<T: Real> Backward<T> for SinOp {
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.mul(&x[0].cos()))]
    }
}

struct CosOp;
impl<T: Real> Backward<T> for CosOp {
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.mul(&x[0].sin()).neg())]
    }
}

struct PowOp<T>(T);
impl<T: Real> Backward<T> for PowOp<T> {
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        let p = self.0;
        vec![Some(g.mul(&x[0].powf(p - T::one())).scale(p))]
    }
}

struct SigmoidOp;
impl<T: Real> Backward<T> for SigmoidOp {
    fn backward(&self, _: &[Var<T>], out: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        let d = out.mul(&out.neg().add_scalar(T::one()));
        vec![Some(g.mul(&d))]
    }
}

struct SoftplusOp;
impl<T: Real> Backward<T> for SoftplusOp {
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.mul(&x[0].sigmoid()))]
    }
}

struct ReshapeOp(Vec<usize>);
impl<T: Real> Backward<T> for ReshapeOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.reshape(&self.0))]
    }
}

struct BroadcastOp(Vec<usize>);
impl<T: Real> Backward<T> for BroadcastOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.sum_to(&self.0))]
    }
}

struct SumToOp(Vec<usize>);
impl<T: Real> Backward<T> for SumToOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.broadcast_to(&self.0))]
    }
}

struct TransposeOp;
impl<T: Real> Backward<T> for TransposeOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.transpose_last2())]
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
    full: usize,
}
impl<T: Real> Backward<T> for NarrowOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.pad_axis(self.axis, self.start, self.full))]
    }
}

struct PadOp {
    axis: usize,
    start: usize,
    len: usize,
}
impl<T: Real> Backward<T> for PadOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.narrow(self.axis, self.start, self.len))]
    }
}

struct ConcatOp {
    axis: usize,
    sizes: Vec<usize>,
}
impl<T: Real> Backward<T> for ConcatOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(self.sizes.len());
        for (i, &len) in self.sizes.iter().enumerate() {
            out.push(pick(needs, i, || g.narrow(self.axis, start, len)));
            start += len;
        }
        out
    }
}

struct IndexSelectOp {
    idx: Rc<Vec<usize>>,
    n: usize,
}
impl<T: Real> Backward<T> for IndexSelectOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.index_add_last(&self.idx, self.n))]
    }
}

struct IndexAddOp {
    idx: Rc<Vec<usize>>,
}
impl<T: Real> Backward<T> for IndexAddOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.index_select_last(&self.idx))]
    }
}

struct BmmOp {
    ta: bool,
    tb: bool,
}
impl<T: Real> Backward<T> for BmmOp {
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let (a, b) = (&x[0], &x[1]);
        let (ta, tb) = (self.ta, self.tb);
        let ga = pick(needs, 0, || {
            let full = if ta { Var::bmm(b, g, tb, true) } else { Var::bmm(g, b, false, !tb) };
            reduce_batch(full, a.shape())
        });
        let gb = pick(needs, 1, || {
            let full = if tb { Var::bmm(g, a, true, ta) } else { Var::bmm(a, g, !ta, false) };
            reduce_batch(full, b.shape())
        });
        vec![ga, gb]
    }
}

fn reduce_batch<T: Real>(full: Var<T>, shape: &[usize]) -> Var<T> {
    if full.shape()[0] != shape[0] {
        full.sum_to(shape)
    } else {
        full
    }
}

struct Im2ColOp {
    geom: ConvGeom,
    channels: usize,
}
impl<T: Real> Backward<T> for Im2ColOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.col2im(self.geom, self.channels))]
    }
}

struct Col2ImOp {
    geom: ConvGeom,
}
impl<T: Real> Backward<T> for Col2ImOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.im2col(self.geom))]
    }
}

struct PoolOp;
impl<T: Real> Backward<T> for PoolOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.avg_unpool2())]
    }
}

struct UnpoolOp;
impl<T: Real> Backward<T> for UnpoolOp {
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        vec![Some(g.avg_pool2())]
    }
}

struct SoftmaxOp;
impl<T: Real> Backward<T> for SoftmaxOp {
    fn backward(&self, _: &[Var<T>], out: &Var<T>, g: &Var<T>, _: &[bool]) -> Vec<Option<Var<T>>> {
        let last = out.shape().len() - 1;
        let dot = g.mul(out).sum_axis(last).broadcast_to(out.shape());
        vec![Some(out.mul(&g.sub(&dot)))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v)
    }

    #[test]
    fn product_rule() {
        let x = Var::leaf(t(&[2], &[2.0, 3.0]));
        let y = Var::leaf(t(&[2], &[5.0, 7.0]));
        let out = x.mul(&y).sum_all();
        let g = grad(&out, &[&x, &y], false);
        assert_eq!(g[0].as_ref().unwrap().value().to_f64_vec(), vec![5.0, 7.0]);
        assert_eq!(g[1].as_ref().unwrap().value().to_f64_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let x = Var::leaf(t(&[1], &[3.0]));
        let out = x.mul(&x).add(&x).sum_all();
        let g = grad(&out, &[&x], false);
        assert_eq!(g[0].as_ref().unwrap().value().item(), 7.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        // d/dx (d/dx x^3) = 6x
        let x = Var::leaf(t(&[1], &[2.0]));
        let y = x.mul(&x).mul(&x).sum_all();
        let g = grad(&y, &[&x], true).remove(0).unwrap();
        assert_eq!(g.value().item(), 12.0);
        let gg = grad(&g.sum_all(), &[&x], false).remove(0).unwrap();
        assert_eq!(gg.value().item(), 12.0);
    }

    #[test]
    fn unrelated_input_has_no_gradient() {
        let x = Var::leaf(t(&[1], &[1.0]));
        let y = Var::leaf(t(&[1], &[1.0]));
        let out = x.exp().sum_all();
        let g = grad(&out, &[&x, &y], false);
        assert!(g[0].is_some());
        assert!(g[1].is_none());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
    }
}
