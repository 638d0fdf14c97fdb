//! Reverse-mode differentiation over a flat record of scalar operations.
//!
//! A [`Tape`] owns the record; [`Var`] is a cheap copyable handle carrying the
//! forward value and the index of the operation that produced it. Handles with
//! no tape slot are constants and are never recorded, which is also how
//! [`Var::detach`] cuts gradient flow.
//!
//! Numerical code that must run both on plain numbers and on recorded values
//! is written against the [`Scalar`] trait, implemented for `f64` and [`Var`].

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// One recorded elementary operation. Operand fields are node indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    AddConst(u32, f64),
    MulConst(u32, f64),
    /// `c / x`
    ConstDiv(f64, u32),
    Exp(u32),
    Ln(u32),
    Powi(u32, i32),
    Powf(u32, f64),
    /// Output of a comparison-gated select; carries the chosen branch only.
    Select(u32),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

/// Ordered record of operations plus the registry of inputs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    inputs: RefCell<Vec<u32>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
            inputs: RefCell::new(Vec::new()),
        }
    }

    /// Registers a new differentiable input.
    pub fn input(&self, value: f64) -> Var<'_> {
        let var = self.push(Op::Input, value);
        self.inputs
            .borrow_mut()
            .push(var.slot.expect("recorded input").1);
        var
    }

    pub fn inputs(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.borrow().len()
    }

    /// Drops every recorded operation and input, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
        self.inputs.get_mut().clear();
    }

    pub fn ops(&self) -> Vec<Op> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }

    fn push(&self, op: Op, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = u32::try_from(nodes.len()).expect("tape exceeds u32 index space");
        nodes.push(Node { op, value });
        Var {
            value,
            slot: Some((self, idx)),
        }
    }

    /// Re-evaluates the record forward from the stored input values.
    pub fn replay(&self) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut out: Vec<f64> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let v = |i: u32| out[i as usize];
            let value = match node.op {
                Op::Input => node.value,
                Op::Add(a, b) => v(a) + v(b),
                Op::Sub(a, b) => v(a) - v(b),
                Op::Mul(a, b) => v(a) * v(b),
                Op::Div(a, b) => v(a) / v(b),
                Op::Neg(a) => -v(a),
                Op::AddConst(a, c) => v(a) + c,
                Op::MulConst(a, c) => v(a) * c,
                Op::ConstDiv(c, a) => c / v(a),
                Op::Exp(a) => v(a).exp(),
                Op::Ln(a) => v(a).ln(),
                Op::Powi(a, k) => v(a).powi(k),
                Op::Powf(a, p) => v(a).powf(p),
                Op::Select(a) => v(a),
            };
            out.push(value);
        }
        out
    }

    /// Backpropagates from `output` and returns the adjoint of every registered
    /// input, in registration order.
    pub fn gradient(&self, output: Var<'_>) -> Result<Vec<f64>> {
        let inputs = self.inputs.borrow();
        let Some((tape, root)) = output.slot else {
            if !output.value.is_finite() {
                return Err(Error::NonFinite {
                    op_index: usize::MAX,
                    quantity: "value",
                });
            }
            return Ok(vec![0.0; inputs.len()]);
        };
        assert!(std::ptr::eq(tape, self), "output recorded on another tape");

        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0_f64; root as usize + 1];
        adj[root as usize] = 1.0;

        for i in (0..=root as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = nodes[i];
            if !node.value.is_finite() {
                return Err(Error::NonFinite {
                    op_index: i,
                    quantity: "value",
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op_index: i,
                    quantity: "adjoint",
                });
            }
            let val = |k: u32| nodes[k as usize].value;
            match node.op {
                Op::Input => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += g * val(b);
                    adj[b as usize] += g * val(a);
                }
                Op::Div(a, b) => {
                    let vb = val(b);
                    adj[a as usize] += g / vb;
                    adj[b as usize] -= g * node.value / vb;
                }
                Op::Neg(a) => adj[a as usize] -= g,
                Op::AddConst(a, _) => adj[a as usize] += g,
                Op::MulConst(a, c) => adj[a as usize] += g * c,
                Op::ConstDiv(_, a) => adj[a as usize] -= g * node.value / val(a),
                Op::Exp(a) => adj[a as usize] += g * node.value,
                Op::Ln(a) => adj[a as usize] += g / val(a),
                Op::Powi(a, k) => adj[a as usize] += g * f64::from(k) * val(a).powi(k - 1),
                Op::Powf(a, p) => adj[a as usize] += g * p * val(a).powf(p - 1.0),
                Op::Select(a) => adj[a as usize] += g,
            }
        }

        let mut grads = Vec::with_capacity(inputs.len());
        for &i in inputs.iter() {
            let g = adj.get(i as usize).copied().unwrap_or(0.0);
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op_index: i as usize,
                    quantity: "adjoint",
                });
            }
            grads.push(g);
        }
        Ok(grads)
    }
}

/// A value produced on a [`Tape`], or a constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    value: f64,
    slot: Option<(&'t Tape, u32)>,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.slot {
            Some((_, i)) => write!(f, "Var({} @ {})", self.value, i),
            None => write!(f, "Var({} const)", self.value),
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Self { value, slot: None }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.slot.is_none()
    }

    /// Index of the producing operation, if recorded.
    pub fn index(&self) -> Option<usize> {
        self.slot.map(|(_, i)| i as usize)
    }

    /// Same value, no gradient flow.
    pub fn detach(self) -> Self {
        Self::constant(self.value)
    }

    fn unary(self, op: impl FnOnce(u32) -> Op, value: f64) -> Self {
        match self.slot {
            Some((tape, i)) => tape.push(op(i), value),
            None => Self::constant(value),
        }
    }

    fn binary(
        self,
        rhs: Self,
        value: f64,
        both: impl FnOnce(u32, u32) -> Op,
        lhs_only: impl FnOnce(u32) -> Op,
        rhs_only: impl FnOnce(u32) -> Op,
    ) -> Self {
        match (self.slot, rhs.slot) {
            (Some((tape, a)), Some((other, b))) => {
                debug_assert!(std::ptr::eq(tape, other), "mixing tapes");
                tape.push(both(a, b), value)
            }
            (Some((tape, a)), None) => tape.push(lhs_only(a), value),
            (None, Some((tape, b))) => tape.push(rhs_only(b), value),
            (None, None) => Self::constant(value),
        }
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp, self.value.exp())
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Ln, self.value.ln())
    }

    pub fn powi(self, k: i32) -> Self {
        self.unary(|i| Op::Powi(i, k), self.value.powi(k))
    }

    pub fn powf(self, p: f64) -> Self {
        self.unary(|i| Op::Powf(i, p), self.value.powf(p))
    }

    /// Returns `a` when `condition` holds, else `b`. The condition is treated
    /// as locally constant; only the chosen branch receives gradient.
    pub fn select(condition: bool, a: Self, b: Self) -> Self {
        let chosen = if condition { a } else { b };
        chosen.unary(Op::Select, chosen.value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let v = self.value + rhs.value;
        let (ca, cb) = (self.value, rhs.value);
        self.binary(
            rhs,
            v,
            Op::Add,
            |a| Op::AddConst(a, cb),
            |b| Op::AddConst(b, ca),
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value - rhs.value;
        let (ca, cb) = (self.value, rhs.value);
        match (self.slot, rhs.slot) {
            (None, Some((tape, b))) => {
                // c - x recorded as (-x) + c
                let neg = tape.push(Op::Neg(b), -cb);
                neg.unary(|i| Op::AddConst(i, ca), v)
            }
            _ => self.binary(
                rhs,
                v,
                Op::Sub,
                |a| Op::AddConst(a, -cb),
                |_| unreachable!(),
            ),
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let v = self.value * rhs.value;
        let (ca, cb) = (self.value, rhs.value);
        self.binary(
            rhs,
            v,
            Op::Mul,
            |a| Op::MulConst(a, cb),
            |b| Op::MulConst(b, ca),
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let v = self.value / rhs.value;
        let (ca, cb) = (self.value, rhs.value);
        self.binary(
            rhs,
            v,
            Op::Div,
            |a| Op::MulConst(a, 1.0 / cb),
            |b| Op::ConstDiv(ca, b),
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.unary(|i| Op::AddConst(i, c), self.value + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.unary(|i| Op::AddConst(i, -c), self.value - c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.unary(|i| Op::MulConst(i, c), self.value * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.unary(|i| Op::MulConst(i, 1.0 / c), self.value / c)
    }
}

/// Numeric type that the samplers and targets are generic over.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, k: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    fn select(condition: bool, a: Self, b: Self) -> Self;
    fn detach(self) -> Self;

    fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant(value: f64) -> Self {
        value
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powi(self, k: i32) -> Self {
        f64::powi(self, k)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn select(condition: bool, a: Self, b: Self) -> Self {
        if condition {
            a
        } else {
            b
        }
    }
    #[inline]
    fn detach(self) -> Self {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

impl<'t> Scalar for Var<'t> {
    fn constant(value: f64) -> Self {
        Var::constant(value)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn powi(self, k: i32) -> Self {
        Var::powi(self, k)
    }
    fn powf(self, p: f64) -> Self {
        Var::powf(self, p)
    }
    fn select(condition: bool, a: Self, b: Self) -> Self {
        Var::select(condition, a, b)
    }
    fn detach(self) -> Self {
        Var::detach(self)
    }
}

/// Returns the same value with all adjoint flow through it cut.
pub fn stop_gradient<S: Scalar>(x: S) -> S {
    x.detach()
}

/// Comparison-gated select; see [`Var::select`].
pub fn gated_select<S: Scalar>(condition: bool, a: S, b: S) -> S {
    S::select(condition, a, b)
}

/// Records `build` over fresh inputs and returns its value and gradient.
pub fn evaluate_with_gradient<F>(build: F, inputs: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars = tape.inputs(inputs);
    let out = build(&vars);
    let grad = tape.gradient(out)?;
    if !out.value().is_finite() {
        return Err(Error::NonFinite {
            op_index: out.index().unwrap_or(usize::MAX),
            quantity: "value",
        });
    }
    Ok((out.value(), grad))
}
