//! Problem definitions: box and affine feasible sets, the nonlinear
//! projection equation (NPE), variational inequalities, complementarity
//! problems, and standard constrained programs, plus the reformulations that
//! reduce the latter three to an NPE.
//!
//! All problem objects are immutable after construction and safe to share
//! across threads. Maps are stored as expression-graph builders so that
//! every consumer (vector fields, residuals, losses) differentiates them
//! with the same engine rather than hand-coded derivatives.

use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::{Bindings, ExprError, Graph, NodeId, Shape, Value};
use crate::linalg::{self, Cholesky, LinalgError, Mat};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("box bounds crossed at component {index}")]
    InvalidBounds { index: usize },
    #[error("equality constraint matrix is rank deficient: {0}")]
    Factorization(#[from] LinalgError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Box-constrained feasible set; bounds may be +-infinity.
#[derive(Debug, Clone)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ProblemError> {
        if lower.len() != upper.len() {
            return Err(ProblemError::DimensionMismatch {
                what: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l > u {
                return Err(ProblemError::InvalidBounds { index: i });
            }
        }
        Ok(BoxSet { lower, upper })
    }

    /// The nonnegative orthant [0, +inf)^n.
    pub fn nonneg_orthant(n: usize) -> Self {
        BoxSet {
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// All of R^n.
    pub fn free(n: usize) -> Self {
        BoxSet {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.dim(), "projection dimension mismatch");
        s.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| x.max(*l).min(*u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

/// Affine set {x | A x = b} with A of full row rank; the Cholesky
/// factorization of A A^T is cached at construction.
#[derive(Debug, Clone)]
pub struct AffineSet {
    a: Mat,
    b: Vec<f64>,
    chol: Cholesky,
}

impl AffineSet {
    pub fn new(a: Mat, b: Vec<f64>) -> Result<Self, ProblemError> {
        if a.rows() != b.len() {
            return Err(ProblemError::DimensionMismatch {
                what: "equality right-hand side",
                expected: a.rows(),
                got: b.len(),
            });
        }
        let aat = a.matmul(&a.transpose());
        let chol = Cholesky::new(&aat)?;
        Ok(AffineSet { a, b, chol })
    }

    pub fn matrix(&self) -> &Mat {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    /// Orthogonal projection x - A^T (A A^T)^{-1} (A x - b), computed through
    /// the cached factorization.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "projection dimension mismatch");
        let mut r = self.a.matvec(x);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        let z = self.chol.solve(&r);
        let correction = self.a.matvec_transposed(&z);
        x.iter().zip(&correction).map(|(xi, c)| xi - c).collect()
    }

    /// Residual A x - b.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.a.matvec(x);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    /// Smallest eigenvalue of A A^T.
    pub fn lambda_min(&self) -> f64 {
        linalg::symmetric_eig_min(&self.a.matmul(&self.a.transpose()))
    }

    /// I - A^T (A A^T)^{-1} A, assembled column by column through the
    /// factorization.
    pub fn tangential_projector(&self) -> Mat {
        let j = self.dim();
        let mut out = Mat::identity(j);
        for col in 0..j {
            let mut e = vec![0.0; j];
            e[col] = 1.0;
            let ae = self.a.matvec(&e);
            let z = self.chol.solve(&ae);
            let u_col = self.a.matvec_transposed(&z);
            for row in 0..j {
                out[(row, col)] -= u_col[row];
            }
        }
        out
    }
}

type MapBuildFn = dyn Fn(&mut Graph, NodeId) -> Result<NodeId, ExprError> + Send + Sync;

/// A map R^in -> R^out (or scalar) stored as a graph-builder so it can be
/// evaluated directly or spliced into larger expressions.
#[derive(Clone)]
pub struct ExprMap {
    input_dim: usize,
    output: Shape,
    build: Arc<MapBuildFn>,
    graph: Arc<Graph>,
    root: NodeId,
}

impl std::fmt::Debug for ExprMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExprMap")
            .field("input_dim", &self.input_dim)
            .field("output", &self.output)
            .field("nodes", &self.graph.len())
            .finish()
    }
}

const MAP_INPUT: &str = "x";

impl ExprMap {
    pub fn vector<F>(input_dim: usize, output_dim: usize, build: F) -> Result<Self, ProblemError>
    where
        F: Fn(&mut Graph, NodeId) -> Result<NodeId, ExprError> + Send + Sync + 'static,
    {
        Self::with_shape(input_dim, Shape::Vector(output_dim), build)
    }

    pub fn scalar<F>(input_dim: usize, build: F) -> Result<Self, ProblemError>
    where
        F: Fn(&mut Graph, NodeId) -> Result<NodeId, ExprError> + Send + Sync + 'static,
    {
        Self::with_shape(input_dim, Shape::Scalar, build)
    }

    fn with_shape<F>(input_dim: usize, output: Shape, build: F) -> Result<Self, ProblemError>
    where
        F: Fn(&mut Graph, NodeId) -> Result<NodeId, ExprError> + Send + Sync + 'static,
    {
        let mut graph = Graph::new();
        let input = graph.param(MAP_INPUT, Shape::Vector(input_dim));
        let root = build(&mut graph, input)?;
        if graph.shape(root) != output {
            return Err(ProblemError::DimensionMismatch {
                what: "map output",
                expected: output.len(),
                got: graph.shape(root).len(),
            });
        }
        Ok(ExprMap {
            input_dim,
            output,
            build: Arc::new(build),
            graph: Arc::new(graph),
            root,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_shape(&self) -> Shape {
        self.output
    }

    /// Append this map's computation to `graph`, applied to node `x`.
    pub fn splice(&self, graph: &mut Graph, x: NodeId) -> Result<NodeId, ExprError> {
        (self.build)(graph, x)
    }

    pub fn eval_vector(&self, x: &[f64]) -> Vec<f64> {
        match self.eval(x) {
            Value::Vector(v) => v,
            v => vec![v.as_scalar()],
        }
    }

    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        self.eval(x).as_scalar()
    }

    fn eval(&self, x: &[f64]) -> Value {
        assert_eq!(x.len(), self.input_dim, "map input dimension mismatch");
        let mut bindings = Bindings::new();
        bindings.set(MAP_INPUT, Value::Vector(x.to_vec()));
        self.graph
            .eval(self.root, &bindings)
            .expect("map graph evaluates on its own input")
    }
}

/// Nonlinear projection equation: find y with P_omega(y - G(y)) = y.
#[derive(Debug, Clone)]
pub struct NpeProblem {
    g: ExprMap,
    omega: BoxSet,
}

impl NpeProblem {
    pub fn new(g: ExprMap, omega: BoxSet) -> Result<Self, ProblemError> {
        if g.input_dim() != omega.dim() || g.output_shape() != Shape::Vector(omega.dim()) {
            return Err(ProblemError::DimensionMismatch {
                what: "NPE map",
                expected: omega.dim(),
                got: g.input_dim(),
            });
        }
        Ok(NpeProblem { g, omega })
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    pub fn map(&self) -> &ExprMap {
        &self.g
    }

    pub fn omega(&self) -> &BoxSet {
        &self.omega
    }

    pub fn g_value(&self, y: &[f64]) -> Vec<f64> {
        self.g.eval_vector(y)
    }
}

/// P_omega(y - alpha G(y)) - y; zero exactly at NPE solutions.
pub fn npe_residual(y: &[f64], problem: &NpeProblem, alpha: f64) -> Vec<f64> {
    assert!(alpha > 0.0, "alpha must be positive");
    assert_eq!(y.len(), problem.dim(), "residual dimension mismatch");
    let g = problem.g_value(y);
    let shifted: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - alpha * gi).collect();
    let projected = problem.omega.project(&shifted);
    projected.iter().zip(y).map(|(p, yi)| p - yi).collect()
}

/// Variational inequality over a box: (y - y*)^T G(y*) >= 0 for all y in omega.
#[derive(Debug, Clone)]
pub struct ViProblem {
    g: ExprMap,
    omega: BoxSet,
}

impl ViProblem {
    pub fn new(g: ExprMap, omega: BoxSet) -> Result<Self, ProblemError> {
        if g.input_dim() != omega.dim() {
            return Err(ProblemError::DimensionMismatch {
                what: "VI map",
                expected: omega.dim(),
                got: g.input_dim(),
            });
        }
        Ok(ViProblem { g, omega })
    }

    /// A VI over a box is already an NPE with the same map and set.
    pub fn to_npe(&self) -> Result<NpeProblem, ProblemError> {
        NpeProblem::new(self.g.clone(), self.omega.clone())
    }
}

/// Nonlinear complementarity problem: y >= 0, G(y) >= 0, y^T G(y) = 0.
#[derive(Debug, Clone)]
pub struct NcpProblem {
    g: ExprMap,
    dim: usize,
}

impl NcpProblem {
    pub fn new(g: ExprMap, dim: usize) -> Result<Self, ProblemError> {
        if g.input_dim() != dim {
            return Err(ProblemError::DimensionMismatch {
                what: "NCP map",
                expected: dim,
                got: g.input_dim(),
            });
        }
        Ok(NcpProblem { g, dim })
    }

    /// NPE over the nonnegative orthant with the same map.
    pub fn to_npe(&self) -> Result<NpeProblem, ProblemError> {
        NpeProblem::new(self.g.clone(), BoxSet::nonneg_orthant(self.dim))
    }
}

/// Standard constrained program: minimize f(x) subject to g(x) <= 0,
/// optional A x = b, and optional bounds on x.
#[derive(Debug, Clone)]
pub struct StandardCnlp {
    objective: ExprMap,
    inequality: ExprMap,
    equality: Option<AffineSet>,
    bounds: Option<BoxSet>,
}

impl StandardCnlp {
    pub fn new(
        objective: ExprMap,
        inequality: ExprMap,
        equality: Option<AffineSet>,
        bounds: Option<BoxSet>,
    ) -> Result<Self, ProblemError> {
        let j = objective.input_dim();
        if objective.output_shape() != Shape::Scalar {
            return Err(ProblemError::DimensionMismatch {
                what: "objective output",
                expected: 1,
                got: objective.output_shape().len(),
            });
        }
        if inequality.input_dim() != j {
            return Err(ProblemError::DimensionMismatch {
                what: "inequality input",
                expected: j,
                got: inequality.input_dim(),
            });
        }
        if let Some(eq) = &equality {
            if eq.dim() != j {
                return Err(ProblemError::DimensionMismatch {
                    what: "equality columns",
                    expected: j,
                    got: eq.dim(),
                });
            }
        }
        if let Some(bx) = &bounds {
            if bx.dim() != j {
                return Err(ProblemError::DimensionMismatch {
                    what: "bound dimension",
                    expected: j,
                    got: bx.dim(),
                });
            }
        }
        Ok(StandardCnlp {
            objective,
            inequality,
            equality,
            bounds,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.objective.input_dim()
    }

    pub fn num_inequalities(&self) -> usize {
        match self.inequality.output_shape() {
            Shape::Vector(k) => k,
            _ => 0,
        }
    }

    pub fn objective(&self) -> &ExprMap {
        &self.objective
    }

    pub fn inequality(&self) -> &ExprMap {
        &self.inequality
    }

    pub fn equality(&self) -> Option<&AffineSet> {
        self.equality.as_ref()
    }

    pub fn bounds(&self) -> Option<&BoxSet> {
        self.bounds.as_ref()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval_scalar(x)
    }

    pub fn inequality_values(&self, x: &[f64]) -> Vec<f64> {
        self.inequality.eval_vector(x)
    }

    /// KKT reformulation as an NPE over y = [x; u]:
    /// G(y) = [grad f(x) + grad g(x)^T u; -g(x)], with the feasible set
    /// combining the x bounds (free where absent) and u >= 0. The gradients
    /// are emitted by the engine's symbolic pass, not hand-coded.
    ///
    /// General equality constraints are not absorbed here; quadratic
    /// programs fold linear inequalities into g ahead of this call.
    pub fn kkt_npe(&self) -> Result<NpeProblem, ProblemError> {
        let j = self.dim_x();
        let k = self.num_inequalities();
        let n = j + k;
        let f_build = self.objective.clone();
        let g_build = self.inequality.clone();
        let map = ExprMap::vector(n, n, move |g, y| {
            let x = g.slice(y, 0, j)?;
            let u = g.slice(y, j, k)?;
            let fx = f_build.splice(g, x)?;
            let gx = g_build.splice(g, x)?;
            let penalty = g.dot(u, gx)?;
            let lagrangian = g.add(fx, penalty)?;
            let grad_x = g.grad_nodes(lagrangian, x)?;
            let neg_g = g.neg(gx);
            let top = g.embed(grad_x, 0, n)?;
            let bottom = g.embed(neg_g, j, n)?;
            g.add(top, bottom)
        })?;

        let mut lower = match &self.bounds {
            Some(b) => b.lower().to_vec(),
            None => vec![f64::NEG_INFINITY; j],
        };
        let mut upper = match &self.bounds {
            Some(b) => b.upper().to_vec(),
            None => vec![f64::INFINITY; j],
        };
        lower.resize(j + k, 0.0);
        upper.resize(j + k, f64::INFINITY);
        NpeProblem::new(map, BoxSet::new(lower, upper)?)
    }
}
