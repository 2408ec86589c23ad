//! Expression graph construction with shape checking.

use std::collections::HashMap;
use std::slice;

use super::ExprError;
use crate::linalg::Mat;

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A runtime tensor: scalar, vector, or row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Mat),
}

impl Value {
    pub fn zeros(shape: Shape) -> Value {
        match shape {
            Shape::Scalar => Value::Scalar(0.0),
            Shape::Vector(n) => Value::Vector(vec![0.0; n]),
            Shape::Matrix(r, c) => Value::Matrix(Mat::zeros(r, c)),
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Value::Scalar(_) => Shape::Scalar,
            Value::Vector(v) => Shape::Vector(v.len()),
            Value::Matrix(m) => Shape::Matrix(m.rows(), m.cols()),
        }
    }

    /// Entries as a flat slice (row-major for matrices).
    pub fn data(&self) -> &[f64] {
        match self {
            Value::Scalar(x) => slice::from_ref(x),
            Value::Vector(v) => v,
            Value::Matrix(m) => m.data(),
        }
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        match self {
            Value::Scalar(x) => slice::from_mut(x),
            Value::Vector(v) => v,
            Value::Matrix(m) => m.data_mut(),
        }
    }

    pub fn as_scalar(&self) -> f64 {
        match self {
            Value::Scalar(x) => *x,
            _ => panic!("expected scalar value"),
        }
    }

    pub fn as_vector(&self) -> &[f64] {
        match self {
            Value::Vector(v) => v,
            _ => panic!("expected vector value"),
        }
    }

    pub fn as_matrix(&self) -> &Mat {
        match self {
            Value::Matrix(m) => m,
            _ => panic!("expected matrix value"),
        }
    }

    pub fn fill_zero(&mut self) {
        for x in self.data_mut() {
            *x = 0.0;
        }
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Constant(Value),
    /// Named scalar input bound at evaluation time; the dual direction.
    InputScalar(String),
    /// Named tensor leaf bound at evaluation time; reverse mode collects
    /// gradients for these.
    Param(String),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    /// Elementwise product of same-shaped operands.
    Mul(NodeId, NodeId),
    /// Scalar (first operand) times tensor (second operand).
    Scale(NodeId, NodeId),
    /// Matrix times vector.
    MatVec(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    /// max(0, x) componentwise.
    Relu(NodeId),
    /// Componentwise clamp to a constant interval; entries may be +-inf.
    Clamp(NodeId, Vec<f64>, Vec<f64>),
    /// Componentwise sign with 0 mapped to 0.
    SignSelect(NodeId),
    /// Componentwise reciprocal.
    Recip(NodeId),
    /// Squared euclidean norm of a vector.
    NormSq(NodeId),
    /// Euclidean norm of a vector.
    Norm(NodeId),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub shape: Shape,
}

/// Name -> tensor map supplying leaf values at evaluation time.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: HashMap<String, Value>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: Value) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Value> {
        self.values.get_mut(name)
    }
}

/// Append-only expression DAG. Operands always precede their consumers, so
/// the node order is a topological order and cycles cannot be constructed.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

fn err(op: &'static str, detail: String) -> ExprError {
    ExprError::ShapeMismatch { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    fn push(&mut self, kind: NodeKind, shape: Shape) -> NodeId {
        self.nodes.push(Node { kind, shape });
        NodeId(self.nodes.len() - 1)
    }

    // ----- leaves -----

    pub fn constant(&mut self, value: Value) -> NodeId {
        let shape = value.shape();
        self.push(NodeKind::Constant(value), shape)
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.constant(Value::Scalar(x))
    }

    pub fn vector(&mut self, v: &[f64]) -> NodeId {
        self.constant(Value::Vector(v.to_vec()))
    }

    pub fn matrix(&mut self, m: Mat) -> NodeId {
        self.constant(Value::Matrix(m))
    }

    pub fn input_scalar(&mut self, name: &str) -> NodeId {
        self.push(NodeKind::InputScalar(name.to_string()), Shape::Scalar)
    }

    pub fn param(&mut self, name: &str, shape: Shape) -> NodeId {
        self.push(NodeKind::Param(name.to_string()), shape)
    }

    // ----- arithmetic -----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        let sa = self.shape(a);
        if sa != self.shape(b) {
            return Err(err("add", format!("{sa:?} vs {:?}", self.shape(b))));
        }
        Ok(self.push(NodeKind::Add(a, b), sa))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        let sa = self.shape(a);
        if sa != self.shape(b) {
            return Err(err("sub", format!("{sa:?} vs {:?}", self.shape(b))));
        }
        Ok(self.push(NodeKind::Sub(a, b), sa))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(NodeKind::Neg(a), s)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        let sa = self.shape(a);
        if sa != self.shape(b) {
            return Err(err("mul", format!("{sa:?} vs {:?}", self.shape(b))));
        }
        Ok(self.push(NodeKind::Mul(a, b), sa))
    }

    pub fn scale(&mut self, s: NodeId, v: NodeId) -> Result<NodeId, ExprError> {
        if self.shape(s) != Shape::Scalar {
            return Err(err("scale", format!("scalar operand has shape {:?}", self.shape(s))));
        }
        let sv = self.shape(v);
        Ok(self.push(NodeKind::Scale(s, v), sv))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, ExprError> {
        match (self.shape(m), self.shape(v)) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => {
                Ok(self.push(NodeKind::MatVec(m, v), Shape::Vector(r)))
            }
            (sm, sv) => Err(err("matvec", format!("{sm:?} * {sv:?}"))),
        }
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        match (self.shape(a), self.shape(b)) {
            (Shape::Vector(n), Shape::Vector(m)) if n == m => {
                Ok(self.push(NodeKind::Dot(a, b), Shape::Scalar))
            }
            (sa, sb) => Err(err("dot", format!("{sa:?} . {sb:?}"))),
        }
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(NodeKind::Tanh(a), s)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(NodeKind::Exp(a), s)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(NodeKind::Abs(a), s)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(NodeKind::Relu(a), s)
    }

    pub fn clamp(&mut self, a: NodeId, lower: &[f64], upper: &[f64]) -> Result<NodeId, ExprError> {
        let s = self.shape(a);
        if lower.len() != s.len() || upper.len() != s.len() {
            return Err(err(
                "clamp",
                format!("{} bounds for {:?}", lower.len(), s),
            ));
        }
        Ok(self.push(NodeKind::Clamp(a, lower.to_vec(), upper.to_vec()), s))
    }

    pub fn sign_select(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(NodeKind::SignSelect(a), s)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(NodeKind::Recip(a), s)
    }

    pub fn norm_sq(&mut self, a: NodeId) -> Result<NodeId, ExprError> {
        match self.shape(a) {
            Shape::Vector(_) => Ok(self.push(NodeKind::NormSq(a), Shape::Scalar)),
            s => Err(err("norm_sq", format!("{s:?}"))),
        }
    }

    pub fn norm(&mut self, a: NodeId) -> Result<NodeId, ExprError> {
        match self.shape(a) {
            Shape::Vector(_) => Ok(self.push(NodeKind::Norm(a), Shape::Scalar)),
            s => Err(err("norm", format!("{s:?}"))),
        }
    }

    // ----- composite helpers (sugar over the primitives above) -----

    /// i-th component of a vector as a scalar: e_i . v.
    pub fn component(&mut self, v: NodeId, i: usize) -> Result<NodeId, ExprError> {
        let n = match self.shape(v) {
            Shape::Vector(n) if i < n => n,
            s => return Err(err("component", format!("index {i} of {s:?}"))),
        };
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let basis = self.vector(&e);
        self.dot(basis, v)
    }

    /// Assemble scalars into a vector: sum_i c_i e_i.
    pub fn assemble(&mut self, comps: &[NodeId]) -> Result<NodeId, ExprError> {
        let n = comps.len();
        let mut acc: Option<NodeId> = None;
        for (i, &c) in comps.iter().enumerate() {
            if self.shape(c) != Shape::Scalar {
                return Err(err("assemble", format!("component {i} is not scalar")));
            }
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let basis = self.vector(&e);
            let term = self.scale(c, basis)?;
            acc = Some(match acc {
                None => term,
                Some(a) => self.add(a, term)?,
            });
        }
        acc.ok_or_else(|| err("assemble", "empty component list".into()))
    }

    /// Embed a vector into a larger zero vector starting at `offset`.
    pub fn embed(&mut self, v: NodeId, offset: usize, n: usize) -> Result<NodeId, ExprError> {
        let m = match self.shape(v) {
            Shape::Vector(m) if offset + m <= n => m,
            s => return Err(err("embed", format!("{s:?} at {offset} into {n}"))),
        };
        let mut sel = Mat::zeros(n, m);
        for i in 0..m {
            sel[(offset + i, i)] = 1.0;
        }
        let sel = self.matrix(sel);
        self.matvec(sel, v)
    }

    /// Contiguous slice of a vector as a smaller vector.
    pub fn slice(&mut self, v: NodeId, offset: usize, len: usize) -> Result<NodeId, ExprError> {
        let n = match self.shape(v) {
            Shape::Vector(n) if offset + len <= n => n,
            s => return Err(err("slice", format!("{offset}..{} of {s:?}", offset + len))),
        };
        let mut sel = Mat::zeros(len, n);
        for i in 0..len {
            sel[(i, offset + i)] = 1.0;
        }
        let sel = self.matrix(sel);
        self.matvec(sel, v)
    }

    /// a + scalar constant, broadcast over a scalar node only.
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, ExprError> {
        let k = self.scalar(c);
        self.add(a, k)
    }

    /// Sum of several same-shaped nodes.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId, ExprError> {
        let mut acc = *terms
            .first()
            .ok_or_else(|| err("sum", "empty term list".into()))?;
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_checked_at_construction() {
        let mut g = Graph::new();
        let v2 = g.vector(&[1.0, 2.0]);
        let v3 = g.vector(&[1.0, 2.0, 3.0]);
        assert!(g.add(v2, v3).is_err());
        assert!(g.dot(v2, v3).is_err());
        let m = g.matrix(Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        assert!(g.matvec(m, v3).is_err());
        assert!(g.matvec(m, v2).is_ok());
    }

    #[test]
    fn scale_requires_scalar_first_operand() {
        let mut g = Graph::new();
        let v = g.vector(&[1.0, 2.0]);
        let s = g.scalar(3.0);
        assert!(g.scale(v, s).is_err());
        assert!(g.scale(s, v).is_ok());
    }
}
