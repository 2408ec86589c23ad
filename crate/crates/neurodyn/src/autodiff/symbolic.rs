//! Vector-Jacobian products emitted as graph nodes.
//!
//! `vjp(root, seed, wrt)` appends nodes computing `J^T seed`, where `J` is
//! the Jacobian of `root` with respect to `wrt` and every other leaf is held
//! fixed. The result is an ordinary subgraph, so gradients of objective and
//! constraint functions can sit inside a vector field and still be
//! differentiated numerically later. Piecewise primitives use the same
//! selections as the numeric passes.

use super::graph::{Graph, NodeId, NodeKind, Shape, Value};
use super::ExprError;
use crate::linalg::Mat;

impl Graph {
    /// Gradient of a scalar `root` with respect to the subgraph node `wrt`.
    pub fn grad_nodes(&mut self, root: NodeId, wrt: NodeId) -> Result<NodeId, ExprError> {
        if self.shape(root) != Shape::Scalar {
            return Err(ExprError::NonScalarRoot);
        }
        self.vjp(root, None, wrt)
    }

    /// J^T seed for the Jacobian of `root` w.r.t. `wrt`. A `None` seed means
    /// a scalar root seeded with 1.
    pub fn vjp(
        &mut self,
        root: NodeId,
        seed: Option<NodeId>,
        wrt: NodeId,
    ) -> Result<NodeId, ExprError> {
        let seed = match seed {
            Some(s) => {
                if self.shape(s) != self.shape(root) {
                    return Err(ExprError::ShapeMismatch {
                        op: "vjp",
                        detail: format!(
                            "seed {:?} vs root {:?}",
                            self.shape(s),
                            self.shape(root)
                        ),
                    });
                }
                s
            }
            None => {
                if self.shape(root) != Shape::Scalar {
                    return Err(ExprError::NonScalarRoot);
                }
                self.scalar(1.0)
            }
        };

        // Which nodes can reach `wrt`? Contributions elsewhere are dropped.
        let mut reach = vec![false; root.0 + 1];
        if wrt.0 <= root.0 {
            reach[wrt.0] = true;
        }
        for i in 0..=root.0 {
            if reach[i] {
                continue;
            }
            reach[i] = self
                .operands(i)
                .iter()
                .any(|op| op.0 <= root.0 && reach[op.0]);
        }
        if !reach[root.0] && root != wrt {
            return Ok(self.constant(Value::zeros(self.shape(wrt))));
        }
        if root == wrt {
            return Ok(seed);
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let a = match adj[i] {
                Some(a) if i != wrt.0 => a,
                _ => continue,
            };
            self.scatter(i, a, &reach, &mut adj)?;
        }
        Ok(match adj[wrt.0] {
            Some(a) => a,
            None => self.constant(Value::zeros(self.shape(wrt))),
        })
    }

    fn operands(&self, i: usize) -> Vec<NodeId> {
        match &self.nodes[i].kind {
            NodeKind::Constant(_) | NodeKind::InputScalar(_) | NodeKind::Param(_) => vec![],
            NodeKind::Add(a, b)
            | NodeKind::Sub(a, b)
            | NodeKind::Mul(a, b)
            | NodeKind::Scale(a, b)
            | NodeKind::MatVec(a, b)
            | NodeKind::Dot(a, b) => vec![*a, *b],
            NodeKind::Neg(a)
            | NodeKind::Tanh(a)
            | NodeKind::Exp(a)
            | NodeKind::Abs(a)
            | NodeKind::Relu(a)
            | NodeKind::Clamp(a, _, _)
            | NodeKind::SignSelect(a)
            | NodeKind::Recip(a)
            | NodeKind::NormSq(a)
            | NodeKind::Norm(a) => vec![*a],
        }
    }

    fn deposit(
        &mut self,
        target: NodeId,
        contribution: NodeId,
        reach: &[bool],
        adj: &mut [Option<NodeId>],
    ) -> Result<(), ExprError> {
        if target.0 >= reach.len() || !reach[target.0] {
            return Ok(());
        }
        adj[target.0] = Some(match adj[target.0] {
            None => contribution,
            Some(prev) => self.add(prev, contribution)?,
        });
        Ok(())
    }

    fn scatter(
        &mut self,
        i: usize,
        adj_i: NodeId,
        reach: &[bool],
        adj: &mut [Option<NodeId>],
    ) -> Result<(), ExprError> {
        let reaches = |id: NodeId| id.0 < reach.len() && reach[id.0];
        let this = NodeId(i);
        match self.nodes[i].kind.clone() {
            NodeKind::Constant(_) | NodeKind::InputScalar(_) | NodeKind::Param(_) => {}
            NodeKind::Add(a, b) => {
                self.deposit(a, adj_i, reach, adj)?;
                self.deposit(b, adj_i, reach, adj)?;
            }
            NodeKind::Sub(a, b) => {
                self.deposit(a, adj_i, reach, adj)?;
                if reaches(b) {
                    let n = self.neg(adj_i);
                    self.deposit(b, n, reach, adj)?;
                }
            }
            NodeKind::Neg(a) => {
                if reaches(a) {
                    let n = self.neg(adj_i);
                    self.deposit(a, n, reach, adj)?;
                }
            }
            NodeKind::Mul(a, b) => {
                if reaches(a) {
                    let c = self.mul(adj_i, b)?;
                    self.deposit(a, c, reach, adj)?;
                }
                if reaches(b) {
                    let c = self.mul(adj_i, a)?;
                    self.deposit(b, c, reach, adj)?;
                }
            }
            NodeKind::Scale(s, v) => {
                if reaches(s) {
                    let c = match self.shape(v) {
                        Shape::Scalar => self.mul(adj_i, v)?,
                        Shape::Vector(_) => self.dot(adj_i, v)?,
                        Shape::Matrix(_, _) => {
                            return Err(ExprError::UnsupportedSymbolic("scale of a matrix"))
                        }
                    };
                    self.deposit(s, c, reach, adj)?;
                }
                if reaches(v) {
                    let c = self.scale(s, adj_i)?;
                    self.deposit(v, c, reach, adj)?;
                }
            }
            NodeKind::MatVec(m, v) => {
                if reaches(m) {
                    return Err(ExprError::UnsupportedSymbolic(
                        "matvec with a differentiated matrix",
                    ));
                }
                if reaches(v) {
                    let mt = match &self.nodes[m.0].kind {
                        NodeKind::Constant(Value::Matrix(mat)) => mat.transpose(),
                        _ => {
                            return Err(ExprError::UnsupportedSymbolic(
                                "matvec with a non-constant matrix",
                            ))
                        }
                    };
                    let mt = self.matrix(mt);
                    let c = self.matvec(mt, adj_i)?;
                    self.deposit(v, c, reach, adj)?;
                }
            }
            NodeKind::Dot(a, b) => {
                if reaches(a) {
                    let c = self.scale(adj_i, b)?;
                    self.deposit(a, c, reach, adj)?;
                }
                if reaches(b) {
                    let c = self.scale(adj_i, a)?;
                    self.deposit(b, c, reach, adj)?;
                }
            }
            NodeKind::Tanh(a) => {
                if reaches(a) {
                    let shape = self.shape(this);
                    let ones = self.ones(shape);
                    let yy = self.mul(this, this)?;
                    let d = self.sub(ones, yy)?;
                    let c = self.mul(adj_i, d)?;
                    self.deposit(a, c, reach, adj)?;
                }
            }
            NodeKind::Exp(a) => {
                if reaches(a) {
                    let c = self.mul(adj_i, this)?;
                    self.deposit(a, c, reach, adj)?;
                }
            }
            NodeKind::Abs(a) => {
                if reaches(a) {
                    let s = self.sign_select(a);
                    let c = self.mul(adj_i, s)?;
                    self.deposit(a, c, reach, adj)?;
                }
            }
            NodeKind::Relu(a) => {
                if reaches(a) {
                    // sign(max(0,x)) is 1 strictly above zero and 0 at or below
                    let s = self.sign_select(this);
                    let c = self.mul(adj_i, s)?;
                    self.deposit(a, c, reach, adj)?;
                }
            }
            NodeKind::Clamp(a, lo, hi) => {
                if reaches(a) {
                    let lo_c = self.bound_const(&lo);
                    let hi_c = self.bound_const(&hi);
                    let above = self.sub(a, lo_c)?;
                    let above = self.sign_select(above);
                    let above = self.relu(above);
                    let below = self.sub(hi_c, a)?;
                    let below = self.sign_select(below);
                    let below = self.relu(below);
                    let gate = self.mul(above, below)?;
                    let c = self.mul(adj_i, gate)?;
                    self.deposit(a, c, reach, adj)?;
                }
            }
            NodeKind::SignSelect(_) => {} // derivative 0 everywhere
            NodeKind::Recip(a) => {
                if reaches(a) {
                    let yy = self.mul(this, this)?;
                    let c = self.mul(adj_i, yy)?;
                    let c = self.neg(c);
                    self.deposit(a, c, reach, adj)?;
                }
            }
            NodeKind::NormSq(a) => {
                if reaches(a) {
                    let two = self.scalar(2.0);
                    let xa = self.scale(two, a)?;
                    let c = self.scale(adj_i, xa)?;
                    self.deposit(a, c, reach, adj)?;
                }
            }
            NodeKind::Norm(_) => {
                return Err(ExprError::UnsupportedSymbolic(
                    "euclidean norm (guarded only in numeric passes)",
                ))
            }
        }
        Ok(())
    }

    fn ones(&mut self, shape: Shape) -> NodeId {
        match shape {
            Shape::Scalar => self.scalar(1.0),
            Shape::Vector(n) => self.vector(&vec![1.0; n]),
            Shape::Matrix(r, c) => self.matrix(Mat::from_vec(r, c, vec![1.0; r * c])),
        }
    }

    fn bound_const(&mut self, bound: &[f64]) -> NodeId {
        if bound.len() == 1 {
            self.scalar(bound[0])
        } else {
            self.vector(bound)
        }
    }
}
