//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every elementary operation as a node holding its primal
//! value and the local partial derivatives with respect to its (at most two)
//! parents. Parents always precede children, so [`Tape::backward`] is a
//! single reverse sweep.
//!
//! ```
//! use cdii::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(1.0);
//! let y = tape.var(2.0);
//! let f = x * y + x.tanh();
//! let grad = tape.backward(f).unwrap();
//! let sech2 = 1.0 - 1f64.tanh().powi(2);
//! assert!((grad.wrt(x) - (2.0 + sech2)).abs() < 1e-15);
//! assert_eq!(grad.wrt(y), 1.0);
//! ```
//!
//! Operations that can leave their domain ([`Var::div`], [`Var::sqrt`])
//! return a `Result`; everything else is available through operators.
//! Mixing variables from two different tapes panics.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Kind of elementary operation recorded in a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Sigmoid,
    Exp,
    Square,
    Sqrt,
    AbsSmooth,
    NormSmooth,
}

/// One tape entry.
#[derive(Debug, Clone, Copy)]
pub struct NodeRecord {
    pub op: Op,
    pub value: f64,
    parents: [usize; 2],
    partials: [f64; 2],
    arity: u8,
}

impl NodeRecord {
    /// `(parent index, local partial)` pairs.
    pub fn inputs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.arity as usize).map(|k| (self.parents[k], self.partials[k]))
    }
}

/// Append-only record of a computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<NodeRecord>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A value on a tape, or a detached constant.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: usize,
    value: f64,
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Registers an independent variable (a leaf).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, value, &[])
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot of the recorded nodes.
    pub fn nodes(&self) -> Vec<NodeRecord> {
        self.nodes.borrow().clone()
    }

    fn push(&self, op: Op, value: f64, inputs: &[(usize, f64)]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let mut parents = [0; 2];
        let mut partials = [0.0; 2];
        for (k, &(p, d)) in inputs.iter().enumerate() {
            debug_assert!(p < nodes.len());
            parents[k] = p;
            partials[k] = d;
        }
        nodes.push(NodeRecord {
            op,
            value,
            parents,
            partials,
            arity: inputs.len() as u8,
        });
        Var {
            tape: Some(self),
            index: nodes.len() - 1,
            value,
        }
    }

    /// Reverse sweep from `output`; returns adjoints of every node.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        match output.tape {
            None => {}
            Some(t) if t.id == self.id => {
                adjoint[output.index] = 1.0;
                for k in (0..=output.index).rev() {
                    let a = adjoint[k];
                    if a == 0.0 {
                        continue;
                    }
                    let node = &nodes[k];
                    for (p, d) in node.inputs() {
                        adjoint[p] += a * d;
                    }
                }
            }
            Some(_) => return Err(Error::arg("output variable belongs to a different tape")),
        }
        let leaves = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op == Op::Leaf)
            .map(|(k, _)| k)
            .collect();
        Ok(Gradients {
            tape_id: self.id,
            adjoint,
            leaves,
        })
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape_id: u64,
    adjoint: Vec<f64>,
    leaves: Vec<usize>,
}

impl Gradients {
    /// Derivative of the output with respect to `v` (zero for constants).
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        match v.tape {
            Some(t) if t.id == self.tape_id => self.adjoint.get(v.index).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }

    /// One derivative per leaf, in creation order.
    pub fn leaves(&self) -> Vec<f64> {
        self.leaves.iter().map(|&k| self.adjoint[k]).collect()
    }
}

impl<'t> Var<'t> {
    /// A detached constant; it never receives a gradient.
    pub fn constant(value: f64) -> Self {
        Self {
            tape: None,
            index: 0,
            value,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        match self.tape {
            Some(t) => t.push(op, value, &[(self.index, partial)]),
            None => Var::constant(value),
        }
    }

    fn binary(self, other: Var<'t>, op: Op, value: f64, da: f64, db: f64) -> Var<'t> {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(value),
            (Some(t), None) => t.push(op, value, &[(self.index, da)]),
            (None, Some(t)) => t.push(op, value, &[(other.index, db)]),
            (Some(t), Some(u)) => {
                assert_eq!(t.id, u.id, "variables from different tapes combined");
                t.push(op, value, &[(self.index, da), (other.index, db)])
            }
        }
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value.tanh();
        self.unary(Op::Tanh, v, 1.0 - v * v)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = 1.0 / (1.0 + (-self.value).exp());
        self.unary(Op::Sigmoid, v, v * (1.0 - v))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value.exp();
        self.unary(Op::Exp, v, v)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square, self.value * self.value, 2.0 * self.value)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        if !(self.value >= 0.0) {
            return Err(Error::numeric("sqrt", format!("negative argument {}", self.value)));
        }
        let v = self.value.sqrt();
        Ok(self.unary(Op::Sqrt, v, 0.5 / v))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        if other.value == 0.0 {
            return Err(Error::numeric("div", "division by zero"));
        }
        let v = self.value / other.value;
        Ok(self.binary(other, Op::Div, v, 1.0 / other.value, -v / other.value))
    }

    /// Huber smoothing of `|t|`: `|t|` when `|t| ≥ ζ`, `t²/(2ζ) + ζ/2` otherwise.
    pub fn abs_smooth(self, zeta: f64) -> Var<'t> {
        let t = self.value;
        let (v, d) = if t.abs() >= zeta {
            (t.abs(), t.signum())
        } else {
            (t * t / (2.0 * zeta) + zeta / 2.0, t / zeta)
        };
        self.unary(Op::AbsSmooth, v, d)
    }

    /// Huber smoothing of the Euclidean norm of `(self, other)`.
    ///
    /// Recorded as one node so that the derivative stays finite at the origin.
    pub fn norm_smooth(self, other: Var<'t>, zeta: f64) -> Var<'t> {
        let (a, b) = (self.value, other.value);
        let r = a.hypot(b);
        let (v, scale) = if r >= zeta {
            (r, 1.0 / r)
        } else {
            (r * r / (2.0 * zeta) + zeta / 2.0, 1.0 / zeta)
        };
        self.binary(other, Op::NormSmooth, v, a * scale, b * scale)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self + Var::constant(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self - Var::constant(rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self * Var::constant(rhs)
    }
}

/// Sums a sequence left to right.
pub fn sum<'t>(terms: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    terms.into_iter().fold(Var::constant(0.0), |acc, t| acc + t)
}

/// Compares the tape gradient of `f` at `point` with central differences of
/// step `h`; returns the largest `|analytic − fd| / max(|analytic|, 1)`.
pub fn grad_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xs = tape.vars(point);
    let out = f(&tape, &xs)?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt_all(&xs);

    let primal = |x: &[f64]| -> Result<f64> {
        let t = Tape::new();
        let vs = t.vars(x);
        Ok(f(&t, &vs)?.value())
    };
    let mut worst: f64 = 0.0;
    let mut shifted = point.to_vec();
    for (i, &g) in analytic.iter().enumerate() {
        shifted[i] = point[i] + h;
        let fp = primal(&shifted)?;
        shifted[i] = point[i] - h;
        let fm = primal(&shifted)?;
        shifted[i] = point[i];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((g - fd).abs() / g.abs().max(1.0));
    }
    Ok(worst)
}
