//! Reverse-mode differentiation over dense image grids and scalars.
//!
//! A [`Tape`] records every operation performed on [`Var`] handles. Values
//! are either scalars or [`ScalarField`]s; binary operations broadcast a
//! scalar against a field. Calling [`Tape::backward`] on a scalar node walks
//! the record in reverse and returns one gradient buffer per parameter.
//!
//! Errors are sticky: the first dimension mismatch or non-finite result is
//! recorded on the tape and reported by [`Tape::fault`] and
//! [`Tape::backward`]. Operations after a fault still run so that graph
//! construction code does not need to thread `Result` through every
//! arithmetic expression.
//!
//! ```
//! use dmk::engine::{ScalarField, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.param(ScalarField::filled(2, 2, 3.0));
//! let loss = (x * x).mean();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(loss.scalar(), 9.0);
//! assert_eq!(grads.field(x).get(0, 0), 6.0 / 4.0);
//! ```

mod field;
mod gradcheck;
mod ops;

use std::cell::RefCell;
use std::fmt;

pub use field::{ScalarField, VectorField3};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradReport, LeafError};
pub use ops::{softplus, Axis, BOUNDS_SLACK, EPS_ABS, EPS_DENOM};

use ops::{BinaryOp, Op, UnaryOp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Field { height: usize, width: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Field { height, width } => height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Field { height, width } => write!(f, "{height}x{width}"),
        }
    }
}

/// A scalar or a field; the payload of every tape node.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Field(ScalarField),
}

impl Value {
    pub fn shape(&self) -> Shape {
        match self {
            Value::Scalar(_) => Shape::Scalar,
            Value::Field(f) => Shape::Field {
                height: f.height(),
                width: f.width(),
            },
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Value::Scalar(s) => std::slice::from_ref(s),
            Value::Field(f) => f.values(),
        }
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        match self {
            Value::Scalar(s) => std::slice::from_mut(s),
            Value::Field(f) => f.values_mut(),
        }
    }

    pub fn len(&self) -> usize {
        self.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.data().is_empty()
    }

    fn zeros(shape: Shape) -> Self {
        match shape {
            Shape::Scalar => Value::Scalar(0.0),
            Shape::Field { height, width } => Value::Field(ScalarField::zeros(height, width)),
        }
    }

    fn from_data(shape: Shape, data: Vec<f64>) -> Self {
        match shape {
            Shape::Scalar => Value::Scalar(data[0]),
            Shape::Field { height, width } => {
                Value::Field(ScalarField::new(height, width, data).expect("shape-consistent data"))
            }
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(s) => Some(*s),
            Value::Field(_) => None,
        }
    }

    pub fn as_field(&self) -> Option<&ScalarField> {
        match self {
            Value::Scalar(_) => None,
            Value::Field(f) => Some(f),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Scalar(v)
    }
}

impl From<ScalarField> for Value {
    fn from(f: ScalarField) -> Self {
        Value::Field(f)
    }
}

struct Node {
    op: Op,
    value: Value,
    param: bool,
}

/// Operation record. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: RefCell<Option<EngineError>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {})", self.id, self.shape())
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
        self.len() == 0
    }

    /// The first error recorded while building the graph, if any.
    pub fn fault(&self) -> Option<EngineError> {
        self.fault.borrow().clone()
    }

    pub fn check(&self) -> Result<(), EngineError> {
        match self.fault() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn record_fault(&self, err: EngineError) {
        let mut fault = self.fault.borrow_mut();
        if fault.is_none() {
            *fault = Some(err);
        }
    }

    fn push(&self, op: Op, value: Value, param: bool) -> Var<'_> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { op, value, param });
            nodes.len() - 1
        };
        let finite = self.nodes.borrow()[id]
            .value
            .data()
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            let name = self.nodes.borrow()[id].op.name();
            self.record_fault(EngineError::NonFinite { op: name, node: id });
        }
        Var { tape: self, id }
    }

    /// A differentiable leaf.
    pub fn param(&self, value: impl Into<Value>) -> Var<'_> {
        self.push(Op::Input, value.into(), true)
    }

    /// A leaf that receives no gradient report.
    pub fn constant(&self, value: impl Into<Value>) -> Var<'_> {
        self.push(Op::Input, value.into(), false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(value)
    }

    fn value_of(&self, id: usize) -> Value {
        self.nodes.borrow()[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Shape {
        self.nodes.borrow()[id].value.shape()
    }

    fn unary(&self, kind: UnaryOp, arg: usize) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[arg].value;
            let data = x.data().iter().map(|&v| kind.forward(v)).collect();
            Value::from_data(x.shape(), data)
        };
        self.push(Op::Unary { kind, arg }, value, false)
    }

    fn binary(&self, kind: BinaryOp, lhs: usize, rhs: usize) -> Var<'_> {
        let (sa, sb) = (self.shape_of(lhs), self.shape_of(rhs));
        let out = match (sa, sb) {
            (Shape::Scalar, s) | (s, Shape::Scalar) => s,
            (a, b) if a == b => a,
            (a, b) => {
                self.record_fault(EngineError::Dimension {
                    op: kind.name(),
                    lhs: a,
                    rhs: b,
                });
                return self.push(Op::Input, Value::zeros(a), false);
            }
        };
        let value = {
            let nodes = self.nodes.borrow();
            let a = nodes[lhs].value.data();
            let b = nodes[rhs].value.data();
            let data = (0..out.len())
                .map(|i| kind.forward(a[ops::bidx(a, i)], b[ops::bidx(b, i)]))
                .collect();
            Value::from_data(out, data)
        };
        self.push(Op::Binary { kind, lhs, rhs }, value, false)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, EngineError> {
        self.check()?;
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.shape() != Shape::Scalar {
            return Err(EngineError::Contract(format!(
                "backward needs a scalar loss, got {}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        adjoints[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = adjoints[id].take() else {
                continue;
            };
            ops::backprop(&nodes, id, &g, &mut adjoints);
            adjoints[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        let params = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.param)
            .map(|(i, _)| i)
            .collect();
        adjoints.resize(nodes.len(), None);
        Ok(Gradients {
            adjoints,
            shapes,
            params,
        })
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
    params: Vec<usize>,
}

impl Gradients {
    /// Gradient w.r.t. `v`, zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Value {
        match &self.adjoints[v.id] {
            Some(g) => Value::from_data(self.shapes[v.id], g.clone()),
            None => Value::zeros(self.shapes[v.id]),
        }
    }

    /// Panics when `v` is not a field.
    pub fn field(&self, v: Var<'_>) -> ScalarField {
        match self.wrt(v) {
            Value::Field(f) => f,
            Value::Scalar(_) => panic!("gradient of a scalar requested as a field"),
        }
    }

    /// Panics when `v` is not a scalar.
    pub fn scalar(&self, v: Var<'_>) -> f64 {
        self.wrt(v).as_scalar().expect("gradient of a field requested as a scalar")
    }

    /// Number of parameters recorded on the tape.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Shape {
        self.tape.shape_of(self.id)
    }

    pub fn value(&self) -> Value {
        self.tape.value_of(self.id)
    }

    /// Panics when the node is a field.
    pub fn scalar(&self) -> f64 {
        self.value().as_scalar().expect("scalar node")
    }

    /// Panics when the node is a scalar.
    pub fn field(&self) -> ScalarField {
        match self.value() {
            Value::Field(f) => f,
            Value::Scalar(_) => panic!("field node expected"),
        }
    }

    fn c(&self, v: f64) -> Var<'t> {
        self.tape.scalar(v)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Sqrt, self.id)
    }

    pub fn abs(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Abs, self.id)
    }

    /// `sqrt(x^2 + EPS_ABS^2)`.
    pub fn abs_smooth(self) -> Var<'t> {
        self.tape.unary(UnaryOp::AbsSmooth, self.id)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Exp, self.id)
    }

    /// `log(1 + e^x)`.
    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Softplus, self.id)
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Sin, self.id)
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Cos, self.id)
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Square, self.id)
    }

    pub fn recip(self) -> Var<'t> {
        self.c(1.0) / self
    }

    pub fn min(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(BinaryOp::Min, self.id, other.id)
    }

    pub fn max(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(BinaryOp::Max, self.id, other.id)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            Value::from_data(x.shape(), x.data().iter().map(|v| v.clamp(lo, hi)).collect())
        };
        self.tape.push(Op::Clamp { arg: self.id, lo, hi }, value, false)
    }

    /// Arithmetic mean over all entries, summed in index order.
    pub fn mean(self) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let d = nodes[self.id].value.data();
            d.iter().sum::<f64>() / d.len() as f64
        };
        self.tape.push(Op::Mean(self.id), Value::Scalar(v), false)
    }

    pub fn sum(self) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.data().iter().sum::<f64>()
        };
        self.tape.push(Op::Sum(self.id), Value::Scalar(v), false)
    }

    /// Forward difference along `axis`; the last column (u) or row (v) is zero.
    pub fn diff(self, axis: Axis) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            match &nodes[self.id].value {
                Value::Field(f) => Some(Value::Field(ops::forward_diff(f, axis))),
                Value::Scalar(_) => None,
            }
        };
        match value {
            Some(v) => self.tape.push(Op::Diff { arg: self.id, axis }, v, false),
            None => {
                self.tape.record_fault(EngineError::Dimension {
                    op: "diff",
                    lhs: Shape::Scalar,
                    rhs: Shape::Scalar,
                });
                self.c(0.0)
            }
        }
    }

    /// 3x3 box average with reflected borders.
    pub fn box3(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.as_field().map(ops::box3)
        };
        match value {
            Some(f) => self.tape.push(Op::Box3(self.id), Value::Field(f), false),
            None => {
                self.tape.record_fault(EngineError::Dimension {
                    op: "box3",
                    lhs: Shape::Scalar,
                    rhs: Shape::Scalar,
                });
                self.c(0.0)
            }
        }
    }

    /// Bilinear lookup of `self` at pixel coordinates `(u, v)` (column, row).
    ///
    /// Returns the sampled field and a `{0,1}` mask that is 1 where the whole
    /// 2x2 neighbourhood lies inside the source; masked samples are 0.
    pub fn sample_bilinear(self, u: Var<'t>, v: Var<'t>) -> (Var<'t>, ScalarField) {
        let out = {
            let nodes = self.tape.nodes.borrow();
            match (&nodes[self.id].value, &nodes[u.id].value, &nodes[v.id].value) {
                (Value::Field(src), Value::Field(uu), Value::Field(vv)) if uu.dims() == vv.dims() => {
                    Ok(ops::bilinear_forward(src, uu, vv))
                }
                (a, b, _) => Err((a.shape(), b.shape())),
            }
        };
        match out {
            Ok((values, mask)) => (
                self.tape.push(
                    Op::Bilinear {
                        src: self.id,
                        u: u.id,
                        v: v.id,
                    },
                    Value::Field(values),
                    false,
                ),
                mask,
            ),
            Err((lhs, rhs)) => {
                self.tape.record_fault(EngineError::Dimension {
                    op: "bilinear",
                    lhs,
                    rhs,
                });
                let shape = u.shape();
                let mask = match shape {
                    Shape::Field { height, width } => ScalarField::zeros(height, width),
                    Shape::Scalar => ScalarField::zeros(2, 2),
                };
                (self.tape.push(Op::Input, Value::zeros(shape), false), mask)
            }
        }
    }
}

macro_rules! binary_impl {
    ($trait:ident, $method:ident, $kind:expr) => {
        impl<'t> std::ops::$trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.tape.binary($kind, self.id, rhs.id)
            }
        }
        impl<'t> std::ops::$trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                let r = self.tape.scalar(rhs);
                self.tape.binary($kind, self.id, r.id)
            }
        }
        impl<'t> std::ops::$trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let l = rhs.tape.scalar(self);
                rhs.tape.binary($kind, l.id, rhs.id)
            }
        }
    };
}

binary_impl!(Add, add, BinaryOp::Add);
binary_impl!(Sub, sub, BinaryOp::Sub);
binary_impl!(Mul, mul, BinaryOp::Mul);
binary_impl!(Div, div, BinaryOp::Div);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(UnaryOp::Neg, self.id)
    }
}

#[cfg(test)]
mod tests;
