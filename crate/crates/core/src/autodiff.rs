//! Forward tangents with respect to the two network inputs, and a
//! reverse-mode tape whose values and local partials live in the same
//! algebra.
//!
//! Recording a network forward pass in `Tape<Dual2>` and sweeping backward
//! once from the output with seed `{1, 0, 0}` yields, for every parameter θ,
//! the triple `(∂P/∂θ, ∂²P/∂a∂θ, ∂²P/∂t∂θ)`. `Tape<f64>` is the plain
//! first-order variant used where no input derivatives are needed.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::{Error, Result};

/// Number system the tape and the networks are generic over.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;

    /// Embeds a real constant (zero tangents).
    fn constant(value: f64) -> Self;
    /// The real (value) component.
    fn real(&self) -> f64;
    fn scale(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn exp(self) -> Self;
    /// Multiplicative inverse; the caller guarantees a nonzero real part.
    fn recip(self) -> Self;
    fn is_finite(&self) -> bool;
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn constant(value: f64) -> Self {
        value
    }
    fn real(&self) -> f64 {
        *self
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// A value with tangents along normalized age (`da`) and normalized time (`dt`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual2 {
    pub value: f64,
    pub da: f64,
    pub dt: f64,
}

impl Dual2 {
    pub const fn new(value: f64, da: f64, dt: f64) -> Self {
        Self { value, da, dt }
    }

    /// Applies a scalar function given its value and derivative at `self.value`.
    #[inline]
    fn chain(self, value: f64, slope: f64) -> Self {
        Self::new(value, slope * self.da, slope * self.dt)
    }
}

impl Add for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.value + o.value, self.da + o.da, self.dt + o.dt)
    }
}

impl Sub for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.value - o.value, self.da - o.da, self.dt - o.dt)
    }
}

impl Mul for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.value * o.value,
            self.da * o.value + self.value * o.da,
            self.dt * o.value + self.value * o.dt,
        )
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.da, -self.dt)
    }
}

impl AddAssign for Dual2 {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.value += o.value;
        self.da += o.da;
        self.dt += o.dt;
    }
}

impl Scalar for Dual2 {
    const ZERO: Self = Dual2::new(0.0, 0.0, 0.0);
    const ONE: Self = Dual2::new(1.0, 0.0, 0.0);

    fn constant(value: f64) -> Self {
        Self::new(value, 0.0, 0.0)
    }
    fn real(&self) -> f64 {
        self.value
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Self::new(c * self.value, c * self.da, c * self.dt)
    }
    fn tanh(self) -> Self {
        let y = self.value.tanh();
        self.chain(y, 1.0 - y * y)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        self.chain(s, s * (1.0 - s))
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.value;
        self.chain(r, -r * r)
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.da.is_finite() && self.dt.is_finite()
    }
}

/// Seeds the network inputs: age carries the unit `da` tangent, time the unit `dt` tangent.
pub fn seed_inputs(a_norm: f64, t_norm: f64) -> (Dual2, Dual2) {
    (Dual2::new(a_norm, 1.0, 0.0), Dual2::new(t_norm, 0.0, 1.0))
}

/// Primitive operations available on [`Dual2`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DualOp {
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Sigmoid,
    Exp,
    Scale(f64),
}

impl DualOp {
    fn arity(self) -> usize {
        match self {
            DualOp::Add | DualOp::Sub | DualOp::Mul | DualOp::Div => 2,
            _ => 1,
        }
    }
}

/// Evaluates one primitive on dual arguments.
pub fn dual_apply(op: DualOp, args: &[Dual2]) -> Result<Dual2> {
    if args.len() != op.arity() {
        return Err(Error::LengthMismatch {
            expected: op.arity(),
            got: args.len(),
        });
    }
    let x = args[0];
    Ok(match op {
        DualOp::Add => x + args[1],
        DualOp::Sub => x - args[1],
        DualOp::Mul => x * args[1],
        DualOp::Div => {
            if args[1].value == 0.0 {
                return Err(Error::DivisionByZero);
            }
            x * args[1].recip()
        }
        DualOp::Tanh => x.tanh(),
        DualOp::Sigmoid => x.sigmoid(),
        DualOp::Exp => x.exp(),
        DualOp::Scale(c) => x.scale(c),
    })
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    Tanh,
    Sigmoid,
    Exp,
    /// `bias + Σ wᵢ·xᵢ` with parameter weights, fused into one node.
    Affine,
    /// `Σ cᵢ·xᵢ` with real coefficients.
    Combination,
}

const NO_NODE: u32 = u32::MAX;

/// Append-only Wengert list. Node `i` owns the edges
/// `edge_end[i-1]..edge_end[i]`, each a parent index with its local partial.
/// Affine weights are not nodes: node `i` also owns the parameter runs
/// `param_run_end[i-1]..param_run_end[i]`, each a `(first flat index, length,
/// start in param_partials)` triple.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    kinds: Vec<OpKind>,
    values: Vec<T>,
    edge_end: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<T>,
    param_run_end: Vec<u32>,
    param_runs: Vec<(u32, u32, u32)>,
    param_partials: Vec<T>,
    param_node: Vec<u32>,
    param_list: Vec<(u32, u32)>,
}

/// Per-parameter adjoints laid out like the flattened parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjoints<T> {
    pub grads: Vec<T>,
}

impl<T> Adjoints<T> {
    pub fn len(&self) -> usize {
        self.grads.len()
    }
    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T> std::ops::Index<usize> for Adjoints<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.grads[i]
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape for a model with `param_count` flat parameters.
    pub fn new(param_count: usize) -> Self {
        Self {
            kinds: Vec::new(),
            values: Vec::new(),
            edge_end: Vec::new(),
            parents: Vec::new(),
            partials: Vec::new(),
            param_run_end: Vec::new(),
            param_runs: Vec::new(),
            param_partials: Vec::new(),
            param_node: vec![NO_NODE; param_count],
            param_list: Vec::new(),
        }
    }

    /// Forgets all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.kinds.clear();
        self.values.clear();
        self.edge_end.clear();
        self.parents.clear();
        self.partials.clear();
        self.param_run_end.clear();
        self.param_runs.clear();
        self.param_partials.clear();
        for &(_, flat) in &self.param_list {
            self.param_node[flat as usize] = NO_NODE;
        }
        self.param_list.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.param_node.len()
    }

    pub fn value(&self, id: NodeId) -> T {
        self.values[id.index()]
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.kinds[id.index()]
    }

    /// Parent indices of a node, in recording order.
    pub fn parents(&self, id: NodeId) -> &[u32] {
        let (lo, hi) = self.edge_range(id.index());
        &self.parents[lo..hi]
    }

    #[inline]
    fn edge_range(&self, i: usize) -> (usize, usize) {
        let lo = if i == 0 { 0 } else { self.edge_end[i - 1] as usize };
        (lo, self.edge_end[i] as usize)
    }

    #[inline]
    fn finish(&mut self, kind: OpKind, value: T) -> NodeId {
        let id = self.values.len();
        assert!(id < NO_NODE as usize, "tape exceeds u32 node indices");
        self.kinds.push(kind);
        self.values.push(value);
        self.edge_end.push(self.parents.len() as u32);
        self.param_run_end.push(self.param_runs.len() as u32);
        NodeId(id as u32)
    }

    #[inline]
    fn edge(&mut self, parent: NodeId, partial: T) {
        self.parents.push(parent.0);
        self.partials.push(partial);
    }

    /// A leaf that is not a parameter (inputs, coefficients).
    pub fn leaf(&mut self, value: T) -> NodeId {
        self.finish(OpKind::Constant, value)
    }

    /// The leaf for flat parameter `index`; repeated calls return the same node.
    pub fn param(&mut self, index: usize, value: f64) -> NodeId {
        let slot = self.param_node[index];
        if slot != NO_NODE {
            return NodeId(slot);
        }
        let id = self.finish(OpKind::Param, T::constant(value));
        self.param_node[index] = id.0;
        self.param_list.push((id.0, index as u32));
        id
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> NodeId {
        let v = self.value(x) + self.value(y);
        self.edge(x, T::ONE);
        self.edge(y, T::ONE);
        self.finish(OpKind::Add, v)
    }

    pub fn sub(&mut self, x: NodeId, y: NodeId) -> NodeId {
        let v = self.value(x) - self.value(y);
        self.edge(x, T::ONE);
        self.edge(y, -T::ONE);
        self.finish(OpKind::Sub, v)
    }

    pub fn mul(&mut self, x: NodeId, y: NodeId) -> NodeId {
        let (vx, vy) = (self.value(x), self.value(y));
        self.edge(x, vy);
        self.edge(y, vx);
        self.finish(OpKind::Mul, vx * vy)
    }

    pub fn div(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (vx, vy) = (self.value(x), self.value(y));
        if vy.real() == 0.0 {
            return Err(Error::DivisionByZero);
        }
        let inv = vy.recip();
        let q = vx * inv;
        self.edge(x, inv);
        self.edge(y, -(q * inv));
        Ok(self.finish(OpKind::Div, q))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).scale(c);
        self.edge(x, T::constant(c));
        self.finish(OpKind::Scale, v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).tanh();
        self.edge(x, T::ONE - y * y);
        self.finish(OpKind::Tanh, y)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sigmoid();
        self.edge(x, s * (T::ONE - s));
        self.finish(OpKind::Sigmoid, s)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let e = self.value(x).exp();
        self.edge(x, e);
        self.finish(OpKind::Exp, e)
    }

    /// `bias + Σ_segments Σ_k weights[k]·inputs[k]`, where the bias and each
    /// weight are parameters addressed by flat index.
    pub fn affine(&mut self, bias: (usize, f64), segments: &[(usize, &[f64], &[NodeId])]) -> NodeId {
        let mut acc = T::constant(bias.1);
        assert!(bias.0 < self.param_node.len(), "affine bias out of range");
        self.param_runs.push((bias.0 as u32, 1, self.param_partials.len() as u32));
        self.param_partials.push(T::ONE);
        for &(offset, weights, inputs) in segments {
            assert_eq!(weights.len(), inputs.len(), "affine segment length mismatch");
            assert!(offset + weights.len() <= self.param_node.len(), "affine weights out of range");
            let values = &self.values;
            for (&w, x) in weights.iter().zip(inputs) {
                acc += values[x.index()].scale(w);
            }
            self.parents.extend(inputs.iter().map(|x| x.0));
            self.partials.extend(weights.iter().map(|&w| T::constant(w)));
            self.param_runs
                .push((offset as u32, weights.len() as u32, self.param_partials.len() as u32));
            self.param_partials.extend(inputs.iter().map(|x| values[x.index()]));
        }
        self.finish(OpKind::Affine, acc)
    }

    /// `Σ cᵢ·xᵢ` with real coefficients.
    pub fn combination(&mut self, terms: &[(f64, NodeId)]) -> NodeId {
        let mut acc = T::ZERO;
        for &(c, x) in terms {
            acc += self.value(x).scale(c);
            self.edge(x, T::constant(c));
        }
        self.finish(OpKind::Combination, acc)
    }

    /// Reverse sweep from `root` seeded with `seed`, calling `visit(flat_index,
    /// adjoint)` for every parameter whose adjoint is nonzero. `scratch` is
    /// resized and overwritten.
    pub fn backward_with(
        &self,
        root: NodeId,
        seed: T,
        scratch: &mut Vec<T>,
        mut visit: impl FnMut(usize, T),
    ) -> Result<()> {
        let r = root.index();
        if r >= self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "root node {r} out of range for a tape of {} nodes",
                self.values.len()
            )));
        }
        scratch.clear();
        scratch.resize(r + 1 + self.param_node.len(), T::ZERO);
        let (nodes, params) = scratch.split_at_mut(r + 1);
        nodes[r] = seed;
        for i in (0..=r).rev() {
            let g = nodes[i];
            if g == T::ZERO {
                continue;
            }
            let (lo, hi) = self.edge_range(i);
            for (&p, &d) in self.parents[lo..hi].iter().zip(&self.partials[lo..hi]) {
                nodes[p as usize] += g * d;
            }
            let plo = if i == 0 { 0 } else { self.param_run_end[i - 1] as usize };
            for &(first, len, start) in &self.param_runs[plo..self.param_run_end[i] as usize] {
                let (first, len, start) = (first as usize, len as usize, start as usize);
                let partials = &self.param_partials[start..start + len];
                for (adj, &d) in params[first..first + len].iter_mut().zip(partials) {
                    *adj += g * d;
                }
            }
        }
        for &(node, flat) in &self.param_list {
            if (node as usize) <= r {
                params[flat as usize] += nodes[node as usize];
            }
        }
        for (k, &adj) in params.iter().enumerate() {
            if adj != T::ZERO {
                visit(k, adj);
            }
        }
        Ok(())
    }

    /// Parameter adjoints of `root` with root seed `ONE`.
    pub fn backward(&self, root: NodeId) -> Result<Adjoints<T>> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        let mut grads = vec![T::ZERO; self.param_count()];
        let mut scratch = Vec::new();
        self.backward_with(root, T::ONE, &mut scratch, |k, g| grads[k] += g)?;
        Ok(Adjoints { grads })
    }
}

/// Central finite-difference check of `f`'s analytic gradient at `theta`.
///
/// `f` returns `(value, gradient)`. The result is the maximum over
/// coordinates of `|analytic − fd| / max(|analytic|, 1e-12)`.
pub fn grad_check<F>(mut f: F, theta: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h={h} must be positive")));
    }
    let (f0, analytic) = f(theta)?;
    if !f0.is_finite() {
        return Err(Error::non_finite("grad_check: f(theta)"));
    }
    if analytic.len() != theta.len() {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            got: analytic.len(),
        });
    }
    let mut x = theta.to_vec();
    let mut worst = 0.0_f64;
    for k in 0..theta.len() {
        x[k] = theta[k] + h;
        let (fp, _) = f(&x)?;
        x[k] = theta[k] - h;
        let (fm, _) = f(&x)?;
        x[k] = theta[k];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::non_finite(format!("grad_check: coordinate {k}")));
        }
        let fd = (fp - fm) / (2.0 * h);
        let err = (analytic[k] - fd).abs() / analytic[k].abs().max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seeds_pass_values_through() {
        assert_eq!(
            seed_inputs(0.0, 0.0),
            (Dual2::new(0.0, 1.0, 0.0), Dual2::new(0.0, 0.0, 1.0))
        );
        assert_eq!(
            seed_inputs(0.5, 1.0),
            (Dual2::new(0.5, 1.0, 0.0), Dual2::new(1.0, 0.0, 1.0))
        );
        assert_eq!(
            seed_inputs(0.27, 0.2),
            (Dual2::new(0.27, 1.0, 0.0), Dual2::new(0.2, 0.0, 1.0))
        );
    }

    #[test]
    fn primitive_examples() {
        let t = dual_apply(DualOp::Tanh, &[Dual2::new(0.0, 1.0, 0.0)]).unwrap();
        assert_eq!(t, Dual2::new(0.0, 1.0, 0.0));
        let m = dual_apply(
            DualOp::Mul,
            &[Dual2::new(2.0, 1.0, 0.0), Dual2::new(3.0, 0.0, 1.0)],
        )
        .unwrap();
        assert_eq!(m, Dual2::new(6.0, 3.0, 2.0));
        let s = dual_apply(DualOp::Sigmoid, &[Dual2::new(0.0, 1.0, 0.0)]).unwrap();
        assert_eq!(s, Dual2::new(0.5, 0.25, 0.0));
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let r = dual_apply(DualOp::Div, &[Dual2::ONE, Dual2::new(0.0, 1.0, 1.0)]);
        assert!(matches!(r, Err(Error::DivisionByZero)));
        let mut tape = Tape::<Dual2>::new(0);
        let x = tape.leaf(Dual2::ONE);
        let z = tape.leaf(Dual2::ZERO);
        assert!(matches!(tape.div(x, z), Err(Error::DivisionByZero)));
        assert!(dual_apply(DualOp::Add, &[Dual2::ONE]).is_err());
    }

    /// Central difference of a real function, the oracle for forward tangents.
    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    proptest! {
        #[test]
        fn tangents_match_finite_differences(x in -3.0f64..3.0, y in 0.2f64..3.0) {
            let h = 1e-6;
            let d = Dual2::new(x, 1.0, 0.0);
            let cases: [(DualOp, fn(f64) -> f64); 4] = [
                (DualOp::Tanh, f64::tanh),
                (DualOp::Sigmoid, |v| 1.0 / (1.0 + (-v).exp())),
                (DualOp::Exp, f64::exp),
                (DualOp::Scale(-1.7), |v| -1.7 * v),
            ];
            for (op, f) in cases {
                let out = dual_apply(op, &[d]).unwrap();
                prop_assert!(rel(out.da, central(f, x, h)) < 1e-6, "{op:?} at {x}");
                prop_assert_eq!(out.dt, 0.0);
            }
            let other = Dual2::new(y, 0.0, 0.0);
            let binary: [(DualOp, fn(f64, f64) -> f64); 4] = [
                (DualOp::Add, |a, b| a + b),
                (DualOp::Sub, |a, b| a - b),
                (DualOp::Mul, |a, b| a * b),
                (DualOp::Div, |a, b| a / b),
            ];
            for (op, f) in binary {
                let out = dual_apply(op, &[d, other]).unwrap();
                prop_assert!(rel(out.da, central(|v| f(v, y), x, h)) < 1e-6, "{op:?}");
                let out = dual_apply(op, &[other, Dual2::new(x.abs() + 0.5, 0.0, 1.0)]).unwrap();
                prop_assert!(rel(out.dt, central(|v| f(y, v), x.abs() + 0.5, h)) < 1e-6, "{op:?}");
            }
        }

        #[test]
        fn tangent_linearity_and_product_rule(
            a in prop::array::uniform3(-10.0f64..10.0),
            b in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let x = Dual2::new(a[0], a[1], a[2]);
            let y = Dual2::new(b[0], b[1], b[2]);
            prop_assert_eq!((x + y).da, x.da + y.da);
            prop_assert_eq!((x + y).dt, x.dt + y.dt);
            let p = x * y;
            prop_assert_eq!(p.da, x.da * y.value + x.value * y.da);
            prop_assert_eq!(p.dt, x.dt * y.value + x.value * y.dt);
        }
    }

    #[test]
    fn backward_square() {
        let mut tape = Tape::<Dual2>::new(1);
        let x = tape.param(0, 3.0);
        let y = tape.mul(x, x);
        let adj = tape.backward(y).unwrap();
        assert_eq!(adj.len(), 1);
        assert_eq!(adj[0].value, 6.0);
    }

    #[test]
    fn backward_tanh_at_zero() {
        let mut tape = Tape::<f64>::new(1);
        let th = tape.param(0, 0.0);
        let y = tape.tanh(th);
        assert_eq!(tape.backward(y).unwrap()[0], 1.0);
    }

    #[test]
    fn backward_yields_mixed_seconds() {
        let a0 = 0.37;
        let mut tape = Tape::<Dual2>::new(1);
        let a = tape.leaf(Dual2::new(a0, 1.0, 0.0));
        let th = tape.param(0, 2.5);
        let y = tape.mul(th, a);
        assert_eq!(tape.backward(y).unwrap()[0], Dual2::new(a0, 1.0, 0.0));
    }

    #[test]
    fn backward_rejects_bad_roots() {
        let tape = Tape::<f64>::new(0);
        assert!(tape.backward(NodeId(0)).is_err());
        let mut tape = Tape::<f64>::new(0);
        tape.leaf(1.0);
        assert!(tape.backward(NodeId(5)).is_err());
    }

    #[test]
    fn params_are_shared_and_cleared() {
        let mut tape = Tape::<f64>::new(2);
        let p = tape.param(1, 2.0);
        assert_eq!(tape.param(1, 2.0), p);
        let q = tape.mul(p, p);
        assert_eq!(tape.parents(q), &[p.0, p.0]);
        tape.clear();
        assert!(tape.is_empty());
        let x = tape.leaf(4.0);
        let p2 = tape.param(1, 2.0);
        assert_ne!(p2, x);
        let y = tape.mul(x, p2);
        assert_eq!(tape.backward(y).unwrap().grads, vec![0.0, 4.0]);
    }

    #[test]
    fn tape_is_topologically_ordered() {
        let mut tape = Tape::<Dual2>::new(3);
        let x = tape.leaf(Dual2::new(0.3, 1.0, 0.0));
        let h = tape.affine((2, 0.1), &[(0, &[0.5, -0.4], &[x, x])]);
        let t = tape.tanh(h);
        let s = tape.sigmoid(t);
        let e = tape.exp(s);
        let c = tape.combination(&[(2.0, e), (-1.0, t)]);
        for i in 0..tape.len() {
            for &p in tape.parents(NodeId(i as u32)) {
                assert!((p as usize) < i);
            }
        }
        assert_eq!(tape.kind(c), OpKind::Combination);
    }

    /// Composite function of three parameters recorded on the tape.
    fn record(tape: &mut Tape<Dual2>, theta: &[f64], a: Dual2, t: Dual2) -> NodeId {
        let ai = tape.leaf(a);
        let ti = tape.leaf(t);
        let h = tape.affine((2, theta[2]), &[(0, &theta[..2], &[ai, ti])]);
        let g = tape.tanh(h);
        let s = tape.sigmoid(ai);
        let m = tape.mul(g, s);
        let e = tape.exp(m);
        let q = tape.div(e, s).unwrap();
        tape.sub(q, g)
    }

    fn plain(theta: &[f64], a: Dual2, t: Dual2) -> Dual2 {
        let h = a.scale(theta[0]) + t.scale(theta[1]) + Dual2::constant(theta[2]);
        let g = h.tanh();
        let s = a.sigmoid();
        (g * s).exp() * s.recip() - g
    }

    #[test]
    fn reverse_over_forward_matches_finite_differences() {
        let theta = [0.7, -1.3, 0.2];
        let (a, t) = seed_inputs(0.4, 0.8);
        let mut tape = Tape::new(3);
        let root = record(&mut tape, &theta, a, t);
        assert_eq!(tape.value(root), plain(&theta, a, t));
        let adj = tape.backward(root).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut p = theta;
            p[k] += h;
            let up = plain(&p, a, t);
            p[k] -= 2.0 * h;
            let dn = plain(&p, a, t);
            let fd = (up - dn).scale(1.0 / (2.0 * h));
            assert!(rel(adj[k].value, fd.value) < 1e-6);
            assert!(rel(adj[k].da, fd.da) < 1e-4);
            assert!(rel(adj[k].dt, fd.dt) < 1e-4);
        }
        // value component equals the pure first-order reverse gradient
        let mut flat = Tape::<f64>::new(3);
        let ai = flat.leaf(0.4);
        let ti = flat.leaf(0.8);
        let hn = flat.affine((2, theta[2]), &[(0, &theta[..2], &[ai, ti])]);
        let g = flat.tanh(hn);
        let s = flat.sigmoid(ai);
        let m = flat.mul(g, s);
        let e = flat.exp(m);
        let q = flat.div(e, s).unwrap();
        let r = flat.sub(q, g);
        let first = flat.backward(r).unwrap();
        for k in 0..3 {
            assert!(rel(first[k], adj[k].value) < 1e-14);
        }
    }

    #[test]
    fn identical_recordings_give_identical_adjoints() {
        let theta = [0.1, 0.9, -0.5];
        let (a, t) = seed_inputs(0.61, 0.13);
        let run = || {
            let mut tape = Tape::new(3);
            let root = record(&mut tape, &theta, a, t);
            tape.backward(root).unwrap()
        };
        let (x, y) = (run(), run());
        for k in 0..3 {
            assert_eq!(x[k].value.to_bits(), y[k].value.to_bits());
            assert_eq!(x[k].da.to_bits(), y[k].da.to_bits());
            assert_eq!(x[k].dt.to_bits(), y[k].dt.to_bits());
        }
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let f = |x: &[f64]| Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()));
        assert!(grad_check(f, &[1.0, 2.0], 1e-5).unwrap() < 1e-7);
    }

    #[test]
    fn grad_check_constant() {
        let f = |x: &[f64]| Ok((4.2, vec![0.0; x.len()]));
        assert!(grad_check(f, &[0.3, -0.1, 7.0], 1e-5).unwrap() <= 1e-9);
    }

    #[test]
    fn grad_check_reports_failures() {
        let f = |x: &[f64]| Ok((x[0].ln(), vec![1.0 / x[0]]));
        assert!(matches!(grad_check(f, &[0.0], 1e-5), Err(Error::NonFinite { .. })));
        assert!(grad_check(|_: &[f64]| Ok((0.0, vec![0.0])), &[1.0], 0.0).is_err());
    }
}
