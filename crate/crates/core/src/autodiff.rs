//! Reverse-mode automatic differentiation on a growable tape.
//!
//! Every intermediate scalar of a forward pass is recorded as a [`Var`] on a
//! [`Tape`]; [`Tape::gradient`] then runs one reverse sweep and returns the
//! adjoint of every node. The reference backend records its whole forward
//! pass (encoding, class scores, contrastive scores, joint loss) on one tape
//! per training step, so a single sweep yields the gradient with respect to
//! all trainable parameters.
//!
//! The [`Scalar`] trait lets the same forward code run either on plain `f64`
//! (inference, finite-difference oracles) or on tape [`Var`]s (training), so
//! the two paths cannot drift apart.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    local: [f64; 2],
}

/// Record of one forward computation. Cheap to create, not reusable across
/// steps: allocate a fresh tape per gradient evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A scalar recorded on a tape. `Copy`, so expressions read like plain math.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input node. Its adjoint after [`Tape::gradient`] is the
    /// derivative of the output with respect to this input.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        self.push(value, [0, 0], [0.0, 0.0])
    }

    /// Record a constant: same layout as a leaf, named for intent.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.leaf(value)
    }

    fn push(&self, value: f64, parents: [usize; 2], local: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node { parents, local });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Reverse sweep from `output`. Returns the adjoint of every node in tape
    /// order; leaf gradients are read off at the leaf indices.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        debug_assert!(std::ptr::eq(output.tape, self), "var from another tape");
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.index] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let l = node.local[k];
                if l != 0.0 {
                    adjoint[node.parents[k]] += l * a;
                }
            }
        }
        adjoint
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    fn unary(self, value: f64, local: f64) -> Var<'t> {
        self.tape.push(value, [self.index, self.index], [local, 0.0])
    }

    fn binary(self, rhs: Var<'t>, value: f64, dl: f64, dr: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        self.tape.push(value, [self.index, rhs.index], [dl, dr])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(
            rhs,
            self.value / rhs.value,
            1.0 / rhs.value,
            -self.value / (rhs.value * rhs.value),
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

/// Scalar arithmetic shared by `f64` and [`Var`]. Forward code written
/// against this trait runs identically for inference and for training.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn value(self) -> f64;
    /// `self * k` for a plain constant `k`.
    fn scale(self, k: f64) -> Self;
    /// `self + k` for a plain constant `k`.
    fn shift(self, k: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    /// `max(self, lo)`. The clamped branch carries zero gradient.
    fn clamp_min(self, lo: f64) -> Self;
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn scale(self, k: f64) -> f64 {
        self * k
    }
    fn shift(self, k: f64) -> f64 {
        self + k
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn clamp_min(self, lo: f64) -> f64 {
        self.max(lo)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }
    fn scale(self, k: f64) -> Var<'t> {
        self.unary(self.value * k, k)
    }
    fn shift(self, k: f64) -> Var<'t> {
        self.unary(self.value + k, 1.0)
    }
    fn exp(self) -> Var<'t> {
        let v = self.value.exp();
        self.unary(v, v)
    }
    fn ln(self) -> Var<'t> {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn clamp_min(self, lo: f64) -> Var<'t> {
        if self.value >= lo {
            self
        } else {
            self.tape.constant(lo)
        }
    }
}

/// Dot product of two equal-length, non-empty slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    debug_assert!(!a.is_empty());
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// Euclidean norm of a non-empty slice.
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Numerically stable log-sum-exp. The maximum is treated as a detached
/// constant, which leaves the gradient unchanged.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    debug_assert!(!xs.is_empty());
    let m = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut acc = xs[0].shift(-m).exp();
    for x in &xs[1..] {
        acc = acc + x.shift(-m).exp();
    }
    acc.ln().shift(m)
}
