//! Vector fields turning problems into first-order ODE systems whose state
//! solutions converge to the problem solution.
//!
//! Three builders are provided, named after the dynamics they implement:
//! the projection flow of Xia & Feng (2007) for NPEs, the two-timescale
//! primal/dual flow of Qin et al. (2014) for convex nonsmooth programs, and
//! the gated flow of Xu et al. (2020) for pseudoconvex programs. The
//! set-valued terms in the latter two are differential inclusions in their
//! original form; this module implements fixed single-valued selections
//! (sign selection 0 at 0, boundary terms dropped at exact equality), which
//! keeps every evaluation deterministic.
//!
//! Fields are assembled as expression graphs so the trainer can
//! differentiate a loss through them without per-problem Jacobians.

use std::sync::Arc;

use crate::autodiff::{Bindings, ExprError, Graph, NodeId, Shape, Value, Workspace};
use crate::problems::{NpeProblem, ProblemError, StandardCnlp};

type BuildFn = dyn Fn(&mut Graph, NodeId, NodeId) -> Result<NodeId, ExprError> + Send + Sync;

const STATE: &str = "y";
const TIME: &str = "t";

/// A (t, y) -> dy/dt evaluator with dimension metadata, backed by an
/// expression graph. Immutable and safe to evaluate from multiple threads.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    name: String,
    time_dependent: bool,
    switch_time: Option<f64>,
    build: Arc<BuildFn>,
    graph: Arc<Graph>,
    root: NodeId,
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("name", &self.name)
            .field("time_dependent", &self.time_dependent)
            .finish()
    }
}

impl VectorField {
    pub fn from_builder<F>(
        dim: usize,
        name: &str,
        time_dependent: bool,
        switch_time: Option<f64>,
        build: F,
    ) -> Result<Self, ProblemError>
    where
        F: Fn(&mut Graph, NodeId, NodeId) -> Result<NodeId, ExprError> + Send + Sync + 'static,
    {
        let mut graph = Graph::new();
        let y = graph.param(STATE, Shape::Vector(dim));
        let t = graph.input_scalar(TIME);
        let root = build(&mut graph, y, t)?;
        if graph.shape(root) != Shape::Vector(dim) {
            return Err(ProblemError::DimensionMismatch {
                what: "field output",
                expected: dim,
                got: graph.shape(root).len(),
            });
        }
        Ok(VectorField {
            dim,
            name: name.to_string(),
            time_dependent,
            switch_time,
            build: Arc::new(build),
            graph: Arc::new(graph),
            root,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// Known switching time of a gated field; adaptive integrators cap their
    /// step ahead of it.
    pub fn switch_time(&self) -> Option<f64> {
        self.switch_time
    }

    /// Append this field's computation to `graph` applied to state node `y`
    /// and time node `t`.
    pub fn splice(&self, graph: &mut Graph, y: NodeId, t: NodeId) -> Result<NodeId, ExprError> {
        (self.build)(graph, y, t)
    }

    /// One-off evaluation; integrators use [`VectorField::evaluator`] instead.
    pub fn eval(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let mut e = self.evaluator();
        let mut out = vec![0.0; self.dim];
        e.eval_into(t, y, &mut out);
        out
    }

    /// Reusable evaluator owning its workspace; create one per thread.
    pub fn evaluator(&self) -> FieldEval {
        let mut bindings = Bindings::new();
        bindings.set(STATE, Value::Vector(vec![0.0; self.dim]));
        FieldEval {
            field: self.clone(),
            ws: Workspace::for_graph(&self.graph),
            bindings,
        }
    }
}

/// Allocation-free repeated evaluation of one [`VectorField`].
pub struct FieldEval {
    field: VectorField,
    ws: Workspace,
    bindings: Bindings,
}

impl FieldEval {
    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn eval_into(&mut self, t: f64, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.field.dim, "state dimension mismatch");
        self.bindings
            .get_mut(STATE)
            .expect("state binding present")
            .data_mut()
            .copy_from_slice(y);
        self.field
            .graph
            .eval_in(self.field.root, &self.bindings, Some((TIME, t)), &mut self.ws)
            .expect("field graph evaluates on its own state");
        out.copy_from_slice(self.ws.value(self.field.root).data());
    }
}

/// Componentwise sign with the selection 0 at 0.
pub fn sign_selection(s: &[f64]) -> Vec<f64> {
    s.iter()
        .map(|&x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// How the equality residual A x - b enters a primal/dual field: through the
/// sign selection (the general form) or as the raw residual (the
/// specialization used by the nonsmooth benchmark instance).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqualityDrive {
    SignSelection,
    Residual,
}

impl VectorField {
    /// Projection flow for an NPE:
    /// dy/dt = lambda (-G(P(y)) + P(y) - y). Time-independent; globally
    /// convergent for locally Lipschitz G.
    pub fn xia2007(problem: &NpeProblem, lambda: f64) -> Result<Self, ProblemError> {
        assert!(lambda > 0.0, "lambda must be positive");
        let n = problem.dim();
        let gmap = problem.map().clone();
        let lower = problem.omega().lower().to_vec();
        let upper = problem.omega().upper().to_vec();
        VectorField::from_builder(n, "xia2007", false, None, move |g, y, _t| {
            let p = g.clamp(y, &lower, &upper)?;
            let gp = gmap.splice(g, p)?;
            let pull = g.sub(p, y)?;
            let drift = g.sub(pull, gp)?;
            let lam = g.scalar(lambda);
            g.scale(lam, drift)
        })
    }

    /// Primal/dual flow for a convex (possibly nonsmooth) program with
    /// equality constraints; state is y = [x; u]:
    ///
    /// dx/dt = -(I-U)[grad f + grad g^T (u+g)^+] - A^T rho(Ax - b)
    /// du/dt = 1/2 (-u + (u+g)^+)
    ///
    /// with U = A^T (A A^T)^{-1} A. The subgradient and rho selections follow
    /// the engine's conventions.
    pub fn qin2014(problem: &StandardCnlp) -> Result<Self, ProblemError> {
        Self::qin2014_with_drive(problem, EqualityDrive::SignSelection)
    }

    pub fn qin2014_with_drive(
        problem: &StandardCnlp,
        drive: EqualityDrive,
    ) -> Result<Self, ProblemError> {
        let j = problem.dim_x();
        let k = problem.num_inequalities();
        if k == 0 {
            return Err(ProblemError::DimensionMismatch {
                what: "inequality count",
                expected: 1,
                got: 0,
            });
        }
        let eq = problem
            .equality()
            .ok_or(ProblemError::DimensionMismatch {
                what: "equality constraints",
                expected: 1,
                got: 0,
            })?
            .clone();
        let n = j + k;
        let f = problem.objective().clone();
        let gm = problem.inequality().clone();
        let tang = eq.tangential_projector();
        let a = eq.matrix().clone();
        let at = a.transpose();
        let b = eq.rhs().to_vec();
        VectorField::from_builder(n, "qin2014", false, None, move |g, y, _t| {
            let x = g.slice(y, 0, j)?;
            let u = g.slice(y, j, k)?;
            let gx = gm.splice(g, x)?;
            let shifted = g.add(u, gx)?;
            let multiplier = g.relu(shifted);
            let fx = f.splice(g, x)?;
            let grad_f = g.grad_nodes(fx, x)?;
            let jt_m = g.vjp(gx, Some(multiplier), x)?;
            let drift = g.add(grad_f, jt_m)?;
            let tang_m = g.matrix(tang.clone());
            let tangential = g.matvec(tang_m, drift)?;
            let a_m = g.matrix(a.clone());
            let ax = g.matvec(a_m, x)?;
            let b_c = g.vector(&b);
            let resid = g.sub(ax, b_c)?;
            let pull = match drive {
                EqualityDrive::SignSelection => g.sign_select(resid),
                EqualityDrive::Residual => resid,
            };
            let at_m = g.matrix(at.clone());
            let eq_term = g.matvec(at_m, pull)?;
            let dx_pos = g.add(tangential, eq_term)?;
            let dx = g.neg(dx_pos);
            let du_diff = g.sub(multiplier, u)?;
            let half = g.scalar(0.5);
            let du = g.scale(half, du_diff)?;
            let top = g.embed(dx, 0, n)?;
            let bottom = g.embed(du, j, n)?;
            g.add(top, bottom)
        })
    }

    /// Gated flow for a pseudoconvex program; state is x alone:
    ///
    /// dx/dt = -theta(t) (I-U) (prod_i(1 - mu(g_i)) grad f + dB) - A^T rho(Ax - b)
    ///
    /// theta switches on at T0 = 1 + |A x0 - b|_1 / lambda_min(A A^T); the
    /// feasibility term dB sums grad g_i over violated constraints. The
    /// selections mu(0) = 0 and theta(T0) = 0 make both gates drop boundary
    /// terms at exact equality.
    pub fn xu2020(problem: &StandardCnlp, x0: &[f64]) -> Result<Self, ProblemError> {
        let j = problem.dim_x();
        if x0.len() != j {
            return Err(ProblemError::DimensionMismatch {
                what: "initial point",
                expected: j,
                got: x0.len(),
            });
        }
        let k = problem.num_inequalities();
        let eq = problem
            .equality()
            .ok_or(ProblemError::DimensionMismatch {
                what: "equality constraints",
                expected: 1,
                got: 0,
            })?
            .clone();
        let l1: f64 = eq.residual(x0).iter().map(|r| r.abs()).sum();
        let t_switch = 1.0 + l1 / eq.lambda_min();

        let f = problem.objective().clone();
        let gm = problem.inequality().clone();
        let tang = eq.tangential_projector();
        let a = eq.matrix().clone();
        let at = a.transpose();
        let b = eq.rhs().to_vec();
        VectorField::from_builder(j, "xu2020", true, Some(t_switch), move |g, y, t| {
            let gx = gm.splice(g, y)?;
            let fx = f.splice(g, y)?;
            let grad_f = g.grad_nodes(fx, y)?;

            // mu gate: 1 while every g_i <= 0, else 0; feasibility pull dB
            // collects grad g_i over strictly violated constraints.
            let one = g.scalar(1.0);
            let mut mu = one;
            let mut feas_pull: Option<NodeId> = None;
            for i in 0..k {
                let gi = g.component(gx, i)?;
                let sign = g.sign_select(gi);
                let violated = g.relu(sign);
                let satisfied = g.sub(one, violated)?;
                mu = g.mul(mu, satisfied)?;
                let grad_gi = g.grad_nodes(gi, y)?;
                let term = g.scale(violated, grad_gi)?;
                feas_pull = Some(match feas_pull {
                    None => term,
                    Some(p) => g.add(p, term)?,
                });
            }
            let descent = g.scale(mu, grad_f)?;
            let inner = match feas_pull {
                Some(p) => g.add(descent, p)?,
                None => descent,
            };
            let tang_m = g.matrix(tang.clone());
            let tangential = g.matvec(tang_m, inner)?;

            // theta(t): 0 for t <= T0, 1 after
            let t0 = g.scalar(t_switch);
            let dt = g.sub(t, t0)?;
            let theta = g.sign_select(dt);
            let theta = g.relu(theta);
            let gated = g.scale(theta, tangential)?;

            let a_m = g.matrix(a.clone());
            let ax = g.matvec(a_m, y)?;
            let b_c = g.vector(&b);
            let resid = g.sub(ax, b_c)?;
            let rho = g.sign_select(resid);
            let at_m = g.matrix(at.clone());
            let eq_term = g.matvec(at_m, rho)?;

            let total = g.add(gated, eq_term)?;
            Ok(g.neg(total))
        })
    }
}
