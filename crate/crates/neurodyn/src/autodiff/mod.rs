//! A small differentiation engine over a fixed primitive set.
//!
//! Expressions are append-only DAGs ([`Graph`]) whose leaves are constants,
//! one scalar input (time), and named parameter tensors. Three consumers:
//!
//! * forward evaluation ([`Graph::eval`]),
//! * forward-mode (dual number) derivative with respect to the scalar input
//!   ([`Graph::eval_dual`]) — one input direction, so forward mode is exact
//!   and cheap,
//! * reverse-mode gradients of a scalar root with respect to every parameter
//!   tensor ([`Graph::grad`]).
//!
//! Piecewise primitives follow fixed selections so results are deterministic:
//! `max(0, x)` and `|x|` have derivative 0 at 0, clamp has derivative 0 at a
//! bound, the sign selection maps 0 to 0, and the euclidean norm has
//! derivative 0 at a zero vector.
//!
//! [`Graph::vjp`] builds the derivative of a subgraph *as new nodes*, which
//! lets problem definitions contain exact gradients of their objective and
//! constraint functions while remaining differentiable end to end.

mod eval;
mod graph;
mod symbolic;

pub use eval::{DualValue, GradientSet, Workspace};
pub use graph::{Bindings, Graph, Node, NodeId, NodeKind, Shape, Value};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("unbound input `{0}`")]
    UnboundInput(String),
    #[error("binding for `{name}` does not match the declared shape")]
    BindingShape { name: String },
    #[error("expression has no scalar input to differentiate against")]
    NoDualInput,
    #[error("more than one scalar input: `{0}` and `{1}`")]
    MultipleDualInputs(String, String),
    #[error("gradient root must be scalar-shaped")]
    NonScalarRoot,
    #[error("symbolic derivative is not supported through {0}")]
    UnsupportedSymbolic(&'static str),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FD_H: f64 = 1e-5;

    fn central_fd(
        graph: &Graph,
        root: NodeId,
        bindings: &Bindings,
        name: &str,
        entry: usize,
    ) -> f64 {
        let mut plus = bindings.clone();
        plus.get_mut(name).unwrap().data_mut()[entry] += FD_H;
        let mut minus = bindings.clone();
        minus.get_mut(name).unwrap().data_mut()[entry] -= FD_H;
        let fp = graph.eval_scalar(root, &plus).unwrap();
        let fm = graph.eval_scalar(root, &minus).unwrap();
        (fp - fm) / (2.0 * FD_H)
    }

    fn assert_grad_matches_fd(graph: &Graph, root: NodeId, bindings: &Bindings, rel: f64) {
        let grads = graph.grad(root, bindings).unwrap();
        for (name, g) in grads.iter() {
            for entry in 0..g.data().len() {
                let fd = central_fd(graph, root, bindings, name, entry);
                let got = g.data()[entry];
                let denom = fd.abs().max(1.0);
                assert!(
                    (got - fd).abs() / denom <= rel,
                    "{name}[{entry}]: grad {got} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn eval_fixed_values() {
        let mut g = Graph::new();
        let x = g.scalar(0.0);
        let t = g.tanh(x);
        assert_eq!(g.eval_scalar(t, &Bindings::new()).unwrap(), 0.0);

        let mut g = Graph::new();
        let v = g.vector(&[3.0, -4.0]);
        let c = g.clamp(v, &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        assert_eq!(
            g.eval(c, &Bindings::new()).unwrap(),
            Value::Vector(vec![2.0, 0.0])
        );

        let mut g = Graph::new();
        let v = g.vector(&[3.0, 4.0]);
        let n = g.norm(v).unwrap();
        assert_eq!(g.eval_scalar(n, &Bindings::new()).unwrap(), 5.0);
    }

    #[test]
    fn eval_reports_unbound_and_misshapen_inputs() {
        let mut g = Graph::new();
        let p = g.param("w", Shape::Vector(2));
        let n = g.norm(p).unwrap();
        assert!(matches!(
            g.eval(n, &Bindings::new()),
            Err(ExprError::UnboundInput(_))
        ));
        let mut b = Bindings::new();
        b.set("w", Value::Vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(g.eval(n, &b), Err(ExprError::BindingShape { .. })));
    }

    #[test]
    fn eval_is_pure() {
        let mut g = Graph::new();
        let t = g.input_scalar("t");
        let e = g.exp(t);
        let v = g.vector(&[0.3, -0.7]);
        let s = g.scale(e, v).unwrap();
        let n = g.norm(s).unwrap();
        let mut b = Bindings::new();
        b.set("t", Value::Scalar(0.37));
        let first = g.eval(n, &b).unwrap();
        for _ in 0..5 {
            assert_eq!(g.eval(n, &b).unwrap(), first);
        }
    }

    #[test]
    fn dual_of_decaying_exponential() {
        // d/dt e^{-t} at t=0 is -1
        let mut g = Graph::new();
        let t = g.input_scalar("t");
        let nt = g.neg(t);
        let e = g.exp(nt);
        let d = g.eval_dual(e, 0.0, &Bindings::new()).unwrap();
        assert_eq!(d.value, Value::Scalar(1.0));
        assert_eq!(d.tangent, Value::Scalar(-1.0));
    }

    #[test]
    fn dual_of_saturating_factor_times_vector() {
        // (1 - e^{-t}) c at t=0: value 0, tangent c
        let c = [2.0, -3.0, 0.5];
        let mut g = Graph::new();
        let t = g.input_scalar("t");
        let nt = g.neg(t);
        let e = g.exp(nt);
        let one = g.scalar(1.0);
        let s = g.sub(one, e).unwrap();
        let cv = g.vector(&c);
        let y = g.scale(s, cv).unwrap();
        let d = g.eval_dual(y, 0.0, &Bindings::new()).unwrap();
        assert_eq!(d.value, Value::Vector(vec![0.0, 0.0, 0.0]));
        assert_eq!(d.tangent, Value::Vector(c.to_vec()));
    }

    #[test]
    fn dual_matches_central_difference() {
        // tanh(2t) at t = 0.3
        let mut g = Graph::new();
        let t = g.input_scalar("t");
        let two = g.scalar(2.0);
        let tt = g.mul(two, t).unwrap();
        let y = g.tanh(tt);
        let d = g.eval_dual(y, 0.3, &Bindings::new()).unwrap();
        let f = |t: f64| (2.0 * t).tanh();
        let fd = (f(0.3 + FD_H) - f(0.3 - FD_H)) / (2.0 * FD_H);
        assert!((d.tangent.as_scalar() - fd).abs() < 1e-6);
    }

    #[test]
    fn dual_requires_exactly_one_scalar_input() {
        let mut g = Graph::new();
        let t = g.input_scalar("t");
        let s = g.input_scalar("s");
        let y = g.mul(t, s).unwrap();
        assert!(matches!(
            g.eval_dual(y, 0.0, &Bindings::new()),
            Err(ExprError::MultipleDualInputs(_, _))
        ));
        let mut g = Graph::new();
        let c = g.scalar(1.0);
        let y = g.exp(c);
        assert!(matches!(
            g.eval_dual(y, 0.0, &Bindings::new()),
            Err(ExprError::NoDualInput)
        ));
    }

    #[test]
    fn grad_of_square_is_power_rule() {
        let mut g = Graph::new();
        let x = g.param("x", Shape::Vector(1));
        let y = g.dot(x, x).unwrap();
        let mut b = Bindings::new();
        b.set("x", Value::Vector(vec![3.0]));
        let grads = g.grad(y, &b).unwrap();
        assert_eq!(grads.get("x").unwrap(), &Value::Vector(vec![6.0]));
    }

    #[test]
    fn grad_rejects_vector_root() {
        let mut g = Graph::new();
        let x = g.param("x", Shape::Vector(2));
        let y = g.tanh(x);
        assert!(matches!(
            g.grad(y, &Bindings::new()),
            Err(ExprError::NonScalarRoot)
        ));
    }

    #[test]
    fn grad_of_norm_of_matrix_vector_product() {
        // d ||W v|| / dW against central differences
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            let mut g = Graph::new();
            let wp = g.param("w", Shape::Matrix(2, 3));
            let vc = g.vector(&v);
            let mv = g.matvec(wp, vc).unwrap();
            let n = g.norm(mv).unwrap();
            let mut b = Bindings::new();
            b.set("w", Value::Matrix(Mat::from_vec(2, 3, w)));
            assert_grad_matches_fd(&g, n, &b, 1e-5);
        }
    }

    #[test]
    fn subgradient_selections_at_breakpoints() {
        // max(0, x) at 0, |x| at 0, clamp at a bound, sign at 0: all 0
        let mut g = Graph::new();
        let x = g.param("x", Shape::Vector(1));
        let r = g.relu(x);
        let a = g.abs(x);
        let c = g.clamp(x, &[0.0], &[2.0]).unwrap();
        let s = g.sign_select(x);
        let stack = [r, a, c, s];
        let mut b = Bindings::new();
        b.set("x", Value::Vector(vec![0.0]));
        for node in stack {
            let one = g.vector(&[1.0]);
            let scalarized = g.dot(node, one).unwrap();
            let grads = g.grad(scalarized, &b).unwrap();
            assert_eq!(grads.get("x").unwrap(), &Value::Vector(vec![0.0]));
        }
        // clamp exactly at the upper bound is also 0
        b.set("x", Value::Vector(vec![2.0]));
        let one = g.vector(&[1.0]);
        let scalarized = g.dot(c, one).unwrap();
        let grads = g.grad(scalarized, &b).unwrap();
        assert_eq!(grads.get("x").unwrap(), &Value::Vector(vec![0.0]));
    }

    #[test]
    fn norm_gradient_at_zero_residual_is_zero() {
        let mut g = Graph::new();
        let x = g.param("x", Shape::Vector(3));
        let n = g.norm(x).unwrap();
        let mut b = Bindings::new();
        b.set("x", Value::Vector(vec![0.0, 0.0, 0.0]));
        let grads = g.grad(n, &b).unwrap();
        assert_eq!(grads.get("x").unwrap(), &Value::Vector(vec![0.0; 3]));
    }

    /// A smooth scalar expression exercising every smooth primitive, used by
    /// the finite-difference property below.
    fn smooth_graph() -> (Graph, NodeId) {
        let mut g = Graph::new();
        let p = g.param("p", Shape::Vector(3));
        let w = g.param("w", Shape::Matrix(2, 3));
        let s = g.param("s", Shape::Scalar);
        let z = g.matvec(w, p).unwrap();
        let a = g.tanh(z);
        let aa = g.dot(a, a).unwrap();
        let es = g.exp(s);
        let scaled = g.scale(es, p).unwrap();
        let nsq = g.norm_sq(scaled).unwrap();
        let two = g.scalar(2.0);
        let shifted = g.add(nsq, two).unwrap();
        let inv = g.recip(shifted);
        let nz = g.norm(z).unwrap();
        let weighted = g.mul(nz, es).unwrap();
        let partial = g.add(aa, inv).unwrap();
        let neg = g.neg(partial);
        let total = g.sub(weighted, neg).unwrap();
        (g, total)
    }

    #[test]
    fn grad_matches_finite_differences_on_random_smooth_graphs() {
        let (g, root) = smooth_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let mut b = Bindings::new();
            b.set(
                "p",
                Value::Vector((0..3).map(|_| rng.random_range(0.2..1.5)).collect()),
            );
            b.set(
                "w",
                Value::Matrix(Mat::from_vec(
                    2,
                    3,
                    (0..6).map(|_| rng.random_range(-1.5..1.5)).collect(),
                )),
            );
            b.set("s", Value::Scalar(rng.random_range(-1.0..1.0)));
            assert_grad_matches_fd(&g, root, &b, 1e-5);
        }
    }

    #[test]
    fn dual_matches_finite_differences_away_from_breakpoints() {
        // y(t) = clamp(tanh(t) * c, lo, hi) + e^{-t} d, probed off the kink
        let mut g = Graph::new();
        let t = g.input_scalar("t");
        let th = g.tanh(t);
        let c = g.vector(&[1.4, -0.9]);
        let v = g.scale(th, c).unwrap();
        let cl = g.clamp(v, &[-0.5, -0.5], &[0.5, 0.5]).unwrap();
        let nt = g.neg(t);
        let et = g.exp(nt);
        let d = g.vector(&[0.25, 0.75]);
        let w = g.scale(et, d).unwrap();
        let y = g.add(cl, w).unwrap();
        let n = g.norm_sq(y).unwrap();

        // dual tangent vs FD over a grid that avoids the clamp breakpoints
        for &tv in &[0.05, 0.2, 0.9, 1.7, 2.5] {
            let dual = g.eval_dual(n, tv, &Bindings::new()).unwrap();
            let f = |t: f64| {
                let tanh = t.tanh();
                let v = [1.4 * tanh, -0.9 * tanh];
                let cl = [v[0].clamp(-0.5, 0.5), v[1].clamp(-0.5, 0.5)];
                let e = (-t).exp();
                let y = [cl[0] + 0.25 * e, cl[1] + 0.75 * e];
                y[0] * y[0] + y[1] * y[1]
            };
            let fd = (f(tv + FD_H) - f(tv - FD_H)) / (2.0 * FD_H);
            let got = dual.tangent.as_scalar();
            assert!(
                (got - fd).abs() / fd.abs().max(1.0) <= 1e-4,
                "t={tv}: {got} vs {fd}"
            );
        }
    }

    #[test]
    fn symbolic_gradient_agrees_with_numeric_reverse_mode() {
        // f(x) = tanh(x).tanh(x) + 1/(2 + |x|^2) + relu(x).x built twice:
        // once as emitted gradient nodes, once through numeric reverse mode.
        let mut g = Graph::new();
        let x = g.param("x", Shape::Vector(3));
        let th = g.tanh(x);
        let t1 = g.dot(th, th).unwrap();
        let nsq = g.norm_sq(x).unwrap();
        let two = g.scalar(2.0);
        let den = g.add(nsq, two).unwrap();
        let t2 = g.recip(den);
        let rl = g.relu(x);
        let t3 = g.dot(rl, x).unwrap();
        let t12 = g.add(t1, t2).unwrap();
        let root = g.add(t12, t3).unwrap();
        let sym = g.grad_nodes(root, x).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let xv: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut b = Bindings::new();
            b.set("x", Value::Vector(xv));
            let symbolic = g.eval(sym, &b).unwrap();
            let numeric = g.grad(root, &b).unwrap();
            let num = numeric.get("x").unwrap();
            for (s, n) in symbolic.data().iter().zip(num.data()) {
                assert!((s - n).abs() <= 1e-12 * n.abs().max(1.0), "{s} vs {n}");
            }
        }
    }

    #[test]
    fn symbolic_vjp_carries_a_fixed_seed() {
        // J^T m for G(x) = [x1^2, x1 x2] with m held fixed:
        // J^T m = [2 x1 m1 + x2 m2, x1 m2]
        let mut g = Graph::new();
        let x = g.param("x", Shape::Vector(2));
        let x1 = g.component(x, 0).unwrap();
        let x2 = g.component(x, 1).unwrap();
        let sq = g.mul(x1, x1).unwrap();
        let cross = g.mul(x1, x2).unwrap();
        let gx = g.assemble(&[sq, cross]).unwrap();
        let m = g.param("m", Shape::Vector(2));
        let pullback = g.vjp(gx, Some(m), x).unwrap();

        let mut b = Bindings::new();
        b.set("x", Value::Vector(vec![1.5, -2.0]));
        b.set("m", Value::Vector(vec![0.5, 3.0]));
        let got = g.eval(pullback, &b).unwrap();
        let expect = [2.0 * 1.5 * 0.5 + (-2.0) * 3.0, 1.5 * 3.0];
        for (a, e) in got.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
