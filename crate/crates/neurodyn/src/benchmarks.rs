//! Registry of six reference problem instances: a quadratic program, a
//! convex smooth program, a variational inequality, a complementarity
//! problem, a convex nonsmooth program, and a pseudoconvex nonsmooth
//! program. Each instance wires the problem data to its dynamics builder,
//! endpoint projection, solution metric, initial point, and horizon, and
//! carries a known solution for verification.
//!
//! Reference solutions are stored at 2-decimal precision and checked within
//! 0.05; they come from long converged runs of the corresponding flows.

use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::{EqualityDrive, VectorField};
use crate::linalg::Mat;
use crate::model::{MlpParams, Projection, StateNet};
use crate::problems::{
    AffineSet, BoxSet, ExprMap, NcpProblem, NpeProblem, ProblemError, StandardCnlp, ViProblem,
};
use crate::trainer::{EpsilonEval, EpsilonKind};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("example id {0} is out of range (valid ids are 1..=6)")]
    OutOfRange(u8),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Feasibility tolerance applied after projecting an endpoint, used by the
/// objective-valued metric.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Pass threshold for reference-solution checks (2-decimal references).
pub const REFERENCE_TOL: f64 = 0.05;

#[derive(Debug, Clone)]
pub enum ProblemKind {
    Npe(Arc<NpeProblem>),
    Cnlp(Arc<StandardCnlp>),
}

/// Construction-time overrides, used by hyperparameter sweeps.
#[derive(Debug, Clone, Default)]
pub struct ExampleOptions {
    pub y0: Option<Vec<f64>>,
    pub t_final: Option<f64>,
}

/// One fully wired benchmark instance.
#[derive(Debug, Clone)]
pub struct ExampleInstance {
    pub id: u8,
    pub name: &'static str,
    pub dim: usize,
    pub problem: ProblemKind,
    pub field: VectorField,
    pub epsilon: EpsilonEval,
    pub y0: Vec<f64>,
    pub t_final: f64,
    pub reference: Vec<f64>,
    /// Target metric value at the reference: 0 for residual-kind instances,
    /// the known objective value otherwise.
    pub reference_value: f64,
    pub note: &'static str,
}

/// Outcome of scoring an instance's own reference solution.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub id: u8,
    pub pass: bool,
    pub epsilon: f64,
    pub expected: f64,
    pub detail: String,
}

impl ExampleInstance {
    pub fn projection(&self) -> &Projection {
        &self.epsilon.projection
    }

    pub fn epsilon_kind_label(&self) -> &'static str {
        match self.epsilon.kind {
            EpsilonKind::NpeResidual { .. } => "npe-error",
            EpsilonKind::Objective { .. } => "objective",
        }
    }

    /// Project a raw state with the instance's endpoint projection.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        self.epsilon.projection.apply(y)
    }

    /// Metric value at the projected state.
    pub fn epsilon_of(&self, y: &[f64]) -> f64 {
        self.epsilon.evaluate(y).1
    }

    /// Seeded network sized for this instance.
    pub fn make_net(&self, hidden: usize, seed: u64) -> StateNet {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        StateNet::new(
            MlpParams::init(self.dim, hidden, &mut rng),
            self.y0.clone(),
            self.t_final,
        )
    }

    /// Score the stored reference solution with the instance's own metric.
    pub fn verify_reference(&self) -> VerifyReport {
        let eps = self.epsilon_of(&self.reference);
        let (pass, detail) = match self.epsilon.kind {
            EpsilonKind::NpeResidual { .. } => (
                eps <= REFERENCE_TOL,
                format!("residual norm {eps:.4} (limit {REFERENCE_TOL})"),
            ),
            EpsilonKind::Objective { .. } => {
                let gap = (eps - self.reference_value).abs();
                (
                    eps.is_finite() && gap <= REFERENCE_TOL,
                    format!(
                        "objective {eps:.4} vs {:.4} (gap {gap:.4}, limit {REFERENCE_TOL})",
                        self.reference_value
                    ),
                )
            }
        };
        VerifyReport {
            id: self.id,
            pass,
            epsilon: eps,
            expected: self.reference_value,
            detail,
        }
    }
}

pub fn load_example(id: u8) -> Result<ExampleInstance, BenchmarkError> {
    load_example_with(id, &ExampleOptions::default())
}

pub fn load_example_with(
    id: u8,
    opts: &ExampleOptions,
) -> Result<ExampleInstance, BenchmarkError> {
    match id {
        1 => example1(opts),
        2 => example2(opts),
        3 => example3(opts),
        4 => example4(opts),
        5 => example5(opts),
        6 => example6(opts),
        other => Err(BenchmarkError::OutOfRange(other)),
    }
}

pub fn all_examples() -> Result<Vec<ExampleInstance>, BenchmarkError> {
    (1..=6).map(load_example).collect()
}

fn npe_eval(problem: &Arc<NpeProblem>) -> EpsilonEval {
    EpsilonEval {
        projection: Projection::Box(problem.omega().clone()),
        kind: EpsilonKind::NpeResidual {
            problem: Arc::clone(problem),
            alpha: 1.0,
        },
    }
}

fn resolve(opts: &ExampleOptions, default_y0: Vec<f64>, default_t: f64) -> (Vec<f64>, f64) {
    (
        opts.y0.clone().unwrap_or(default_y0),
        opts.t_final.unwrap_or(default_t),
    )
}

/// Quadratic program: minimize x^T Q x / 2 + p^T x subject to C x <= d and
/// x >= 0, solved through its KKT reformulation as an NPE over y = [x; u].
/// The NPE map is affine, G(y) = M y + q with M = [[Q, C^T], [-C, 0]] and
/// q = [p; d].
fn example1(opts: &ExampleOptions) -> Result<ExampleInstance, BenchmarkError> {
    let q_mat = Mat::from_rows(&[&[18.0, 9.0, 13.0], &[9.0, 14.0, 6.0], &[13.0, 6.0, 10.0]]);
    let p = vec![-30.0, -30.0, 15.0];
    let c_mat = Mat::from_rows(&[&[4.0, -5.0, -4.0], &[-5.0, -2.0, -4.0]]);
    let d = vec![-5.0, 1.0];

    let objective = ExprMap::scalar(3, {
        let q_mat = q_mat.clone();
        let p = p.clone();
        move |g, x| {
            let qm = g.matrix(q_mat.clone());
            let qx = g.matvec(qm, x)?;
            let quad = g.dot(x, qx)?;
            let half = g.scalar(0.5);
            let quad = g.mul(half, quad)?;
            let pv = g.vector(&p);
            let lin = g.dot(pv, x)?;
            g.add(quad, lin)
        }
    })?;
    let inequality = ExprMap::vector(3, 2, {
        let c_mat = c_mat.clone();
        let d = d.clone();
        move |g, x| {
            let cm = g.matrix(c_mat.clone());
            let cx = g.matvec(cm, x)?;
            let dv = g.vector(&d);
            g.sub(cx, dv)
        }
    })?;
    let bounds = BoxSet::new(vec![0.0; 3], vec![f64::INFINITY; 3])?;
    let cnlp = StandardCnlp::new(objective, inequality, None, Some(bounds))?;
    let npe = Arc::new(cnlp.kkt_npe()?);

    let (y0, t_final) = resolve(opts, vec![0.0; 5], 10.0);
    Ok(ExampleInstance {
        id: 1,
        name: "quadratic-program",
        dim: 5,
        field: VectorField::xia2007(&npe, 1.0)?,
        epsilon: npe_eval(&npe),
        problem: ProblemKind::Npe(npe),
        y0,
        t_final,
        reference: vec![0.82, 1.65, 0.00, 0.10, 0.00],
        reference_value: 0.0,
        note: "converged fixed-step endpoint at 2-decimal precision",
    })
}

/// Convex smooth program: quadratic objective with one linear and one
/// quadratic inequality and box bounds 0 <= x <= 2, via the KKT NPE.
fn example2(opts: &ExampleOptions) -> Result<ExampleInstance, BenchmarkError> {
    let objective = ExprMap::scalar(2, |g, x| {
        let x1 = g.component(x, 0)?;
        let x2 = g.component(x, 1)?;
        let x1x1 = g.mul(x1, x1)?;
        let x2x2 = g.mul(x2, x2)?;
        let two = g.scalar(2.0);
        let t2 = g.mul(two, x2x2)?;
        let x1x2 = g.mul(x1, x2)?;
        let t3 = g.mul(two, x1x2)?;
        let ten = g.scalar(10.0);
        let t4 = g.mul(ten, x1)?;
        let twelve = g.scalar(12.0);
        let t5 = g.mul(twelve, x2)?;
        let s1 = g.add(x1x1, t2)?;
        let s2 = g.add(s1, t3)?;
        let s3 = g.sub(s2, t4)?;
        g.sub(s3, t5)
    })?;
    let inequality = ExprMap::vector(2, 2, |g, x| {
        let x1 = g.component(x, 0)?;
        let x2 = g.component(x, 1)?;
        // g1 = x1 + 3 x2 - 8
        let three = g.scalar(3.0);
        let t = g.mul(three, x2)?;
        let s = g.add(x1, t)?;
        let eight = g.scalar(8.0);
        let g1 = g.sub(s, eight)?;
        // g2 = x1^2 + x2^2 + 2 x1 - 2 x2 - 3
        let x1x1 = g.mul(x1, x1)?;
        let x2x2 = g.mul(x2, x2)?;
        let two = g.scalar(2.0);
        let tx1 = g.mul(two, x1)?;
        let tx2 = g.mul(two, x2)?;
        let s1 = g.add(x1x1, x2x2)?;
        let s2 = g.add(s1, tx1)?;
        let s3 = g.sub(s2, tx2)?;
        let three_c = g.scalar(3.0);
        let g2 = g.sub(s3, three_c)?;
        g.assemble(&[g1, g2])
    })?;
    let bounds = BoxSet::new(vec![0.0, 0.0], vec![2.0, 2.0])?;
    let cnlp = StandardCnlp::new(objective, inequality, None, Some(bounds))?;
    let npe = Arc::new(cnlp.kkt_npe()?);

    let (y0, t_final) = resolve(opts, vec![0.0; 4], 10.0);
    Ok(ExampleInstance {
        id: 2,
        name: "convex-smooth-program",
        dim: 4,
        field: VectorField::xia2007(&npe, 1.0)?,
        epsilon: npe_eval(&npe),
        problem: ProblemKind::Npe(npe),
        y0,
        t_final,
        reference: vec![1.00, 2.00, 0.00, 1.00],
        reference_value: 0.0,
        note: "exact KKT point of the program",
    })
}

/// Variational inequality over a box, with a rational map; already an NPE.
fn example3(opts: &ExampleOptions) -> Result<ExampleInstance, BenchmarkError> {
    let map = ExprMap::vector(4, 4, |g, y| {
        let y1 = g.component(y, 0)?;
        let y2 = g.component(y, 1)?;
        let y3 = g.component(y, 2)?;
        let y4 = g.component(y, 3)?;
        // y1 - 2/(y1 + 0.8) + 5 y2 - 13
        let c1 = {
            let shifted = g.add_scalar(y1, 0.8)?;
            let inv = g.recip(shifted);
            let two = g.scalar(2.0);
            let frac = g.mul(two, inv)?;
            let five = g.scalar(5.0);
            let lin = g.mul(five, y2)?;
            let s1 = g.sub(y1, frac)?;
            let s2 = g.add(s1, lin)?;
            let thirteen = g.scalar(13.0);
            g.sub(s2, thirteen)?
        };
        // 1.2 y1 + 7 y2
        let c2 = {
            let a = g.scalar(1.2);
            let t1 = g.mul(a, y1)?;
            let b = g.scalar(7.0);
            let t2 = g.mul(b, y2)?;
            g.add(t1, t2)?
        };
        // 3 y3 + 8 y4
        let c3 = {
            let a = g.scalar(3.0);
            let t1 = g.mul(a, y3)?;
            let b = g.scalar(8.0);
            let t2 = g.mul(b, y4)?;
            g.add(t1, t2)?
        };
        // y3 + 2 y4 - 4/(y4 + 2) - 12
        let c4 = {
            let two = g.scalar(2.0);
            let t1 = g.mul(two, y4)?;
            let shifted = g.add_scalar(y4, 2.0)?;
            let inv = g.recip(shifted);
            let four = g.scalar(4.0);
            let frac = g.mul(four, inv)?;
            let s1 = g.add(y3, t1)?;
            let s2 = g.sub(s1, frac)?;
            let twelve = g.scalar(12.0);
            g.sub(s2, twelve)?
        };
        g.assemble(&[c1, c2, c3, c4])
    })?;
    let omega = BoxSet::new(
        vec![1.0, -3.0, -3.0, 1.0],
        vec![100.0, 100.0, 100.0, 100.0],
    )?;
    let vi = ViProblem::new(map, omega)?;
    let npe = Arc::new(vi.to_npe()?);

    let (y0, t_final) = resolve(opts, vec![0.0; 4], 10.0);
    Ok(ExampleInstance {
        id: 3,
        name: "variational-inequality",
        dim: 4,
        field: VectorField::xia2007(&npe, 1.0)?,
        epsilon: npe_eval(&npe),
        problem: ProblemKind::Npe(npe),
        y0,
        t_final,
        reference: vec![28.07, -3.00, -3.00, 7.71],
        reference_value: 0.0,
        note: "converged flow endpoint at 2-decimal precision",
    })
}

/// Complementarity problem with an exponential map, reformulated as an NPE
/// over the nonnegative orthant.
fn example4(opts: &ExampleOptions) -> Result<ExampleInstance, BenchmarkError> {
    let map = ExprMap::vector(3, 3, |g, y| {
        let y1 = g.component(y, 0)?;
        let y2 = g.component(y, 1)?;
        let y3 = g.component(y, 2)?;
        // e = exp(y1^2 + (y2 - 1)^2)
        let y1sq = g.mul(y1, y1)?;
        let one = g.scalar(1.0);
        let y2m1 = g.sub(y2, one)?;
        let y2m1sq = g.mul(y2m1, y2m1)?;
        let arg = g.add(y1sq, y2m1sq)?;
        let e = g.exp(arg);
        let two = g.scalar(2.0);
        // F1 = 2 y1 e + y1 - y2 - y3 + 1
        let c1 = {
            let t = g.mul(two, y1)?;
            let t = g.mul(t, e)?;
            let s1 = g.add(t, y1)?;
            let s2 = g.sub(s1, y2)?;
            let s3 = g.sub(s2, y3)?;
            g.add_scalar(s3, 1.0)?
        };
        // F2 = 2 (y2 - 1) e - y1 + 2 y2 + 2 y3 + 3
        let c2 = {
            let t = g.mul(two, y2m1)?;
            let t = g.mul(t, e)?;
            let s1 = g.sub(t, y1)?;
            let ty2 = g.mul(two, y2)?;
            let ty3 = g.mul(two, y3)?;
            let s2 = g.add(s1, ty2)?;
            let s3 = g.add(s2, ty3)?;
            g.add_scalar(s3, 3.0)?
        };
        // F3 = -y1 + 2 y2 + 3 y3
        let c3 = {
            let n1 = g.neg(y1);
            let ty2 = g.mul(two, y2)?;
            let three = g.scalar(3.0);
            let ty3 = g.mul(three, y3)?;
            let s = g.add(n1, ty2)?;
            g.add(s, ty3)?
        };
        g.assemble(&[c1, c2, c3])
    })?;
    let ncp = NcpProblem::new(map, 3)?;
    let npe = Arc::new(ncp.to_npe()?);

    let (y0, t_final) = resolve(opts, vec![0.0; 3], 10.0);
    Ok(ExampleInstance {
        id: 4,
        name: "complementarity-problem",
        dim: 3,
        field: VectorField::xia2007(&npe, 1.0)?,
        epsilon: npe_eval(&npe),
        problem: ProblemKind::Npe(npe),
        y0,
        t_final,
        reference: vec![0.00, 0.17, 0.00],
        reference_value: 0.0,
        note: "converged flow endpoint at 2-decimal precision",
    })
}

/// Convex nonsmooth program: absolute-value objective term, one quadratic
/// inequality, and the equality 2 x1 + 5 x3 = 7; solved by the primal/dual
/// flow in its residual-drive specialization, with state y = [x; u].
fn example5(opts: &ExampleOptions) -> Result<ExampleInstance, BenchmarkError> {
    let objective = ExprMap::scalar(3, |g, x| {
        let x1 = g.component(x, 0)?;
        let x2 = g.component(x, 1)?;
        let x3 = g.component(x, 2)?;
        // 10 (x1 + x2)^2
        let s = g.add(x1, x2)?;
        let ssq = g.mul(s, s)?;
        let ten = g.scalar(10.0);
        let t1 = g.mul(ten, ssq)?;
        // (x1 - 2)^2
        let two = g.scalar(2.0);
        let x1m2 = g.sub(x1, two)?;
        let t2 = g.mul(x1m2, x1m2)?;
        // 20 |x3 - 3|
        let three = g.scalar(3.0);
        let x3m3 = g.sub(x3, three)?;
        let a = g.abs(x3m3);
        let twenty = g.scalar(20.0);
        let t3 = g.mul(twenty, a)?;
        // e^{x3}
        let t4 = g.exp(x3);
        let s1 = g.add(t1, t2)?;
        let s2 = g.add(s1, t3)?;
        g.add(s2, t4)
    })?;
    let inequality = ExprMap::vector(3, 1, |g, x| {
        let x1 = g.component(x, 0)?;
        let x2 = g.component(x, 1)?;
        let three = g.scalar(3.0);
        let sh = g.add(x1, three)?;
        let sq = g.mul(sh, sh)?;
        let s = g.add(sq, x2)?;
        let c = g.scalar(36.0);
        let v = g.sub(s, c)?;
        g.assemble(&[v])
    })?;
    let eq = AffineSet::new(Mat::from_rows(&[&[2.0, 0.0, 5.0]]), vec![7.0])?;
    let cnlp = Arc::new(StandardCnlp::new(objective, inequality, Some(eq.clone()), None)?);

    let (y0, t_final) = resolve(opts, vec![0.0; 4], 10.0);
    Ok(ExampleInstance {
        id: 5,
        name: "convex-nonsmooth-program",
        dim: 4,
        field: VectorField::qin2014_with_drive(&cnlp, EqualityDrive::Residual)?,
        epsilon: EpsilonEval {
            projection: Projection::AffinePrefix(eq),
            kind: EpsilonKind::Objective {
                problem: Arc::clone(&cnlp),
                feas_tol: FEASIBILITY_TOL,
            },
        },
        problem: ProblemKind::Cnlp(cnlp),
        y0,
        t_final,
        reference: vec![-0.86, 0.86, 1.74, 0.00],
        reference_value: 39.020,
        note: "known minimizer at 2-decimal precision; objective 39.020",
    })
}

/// Pseudoconvex nonsmooth program: a rational objective with an exponential
/// absolute-value term, two inequalities, and the equality x1 + 2 x2 + x3 = 2,
/// solved by the gated flow with state x alone. The gated, discontinuous
/// field makes this the stiff instance of the registry.
fn example6(opts: &ExampleOptions) -> Result<ExampleInstance, BenchmarkError> {
    let objective = ExprMap::scalar(3, |g, x| {
        let x1 = g.component(x, 0)?;
        let x2 = g.component(x, 1)?;
        let x3 = g.component(x, 2)?;
        // numerator: x1 + x2 + e^{|x2 - 1|} - 40
        let one = g.scalar(1.0);
        let x2m1 = g.sub(x2, one)?;
        let a = g.abs(x2m1);
        let ea = g.exp(a);
        let s1 = g.add(x1, x2)?;
        let s2 = g.add(s1, ea)?;
        let forty = g.scalar(40.0);
        let numer = g.sub(s2, forty)?;
        // denominator: (x1 + x2 + x3)^2 + 3
        let s3 = g.add(s1, x3)?;
        let sq = g.mul(s3, s3)?;
        let denom = g.add_scalar(sq, 3.0)?;
        let inv = g.recip(denom);
        g.mul(numer, inv)
    })?;
    let inequality = ExprMap::vector(3, 2, |g, x| {
        let x1 = g.component(x, 0)?;
        let x2 = g.component(x, 1)?;
        // g1 = -3 x1 + 2 x2 - 5
        let m3 = g.scalar(-3.0);
        let t1 = g.mul(m3, x1)?;
        let two = g.scalar(2.0);
        let t2 = g.mul(two, x2)?;
        let s1 = g.add(t1, t2)?;
        let five = g.scalar(5.0);
        let g1 = g.sub(s1, five)?;
        // g2 = x1^2 + x2 - 3
        let sq = g.mul(x1, x1)?;
        let s2 = g.add(sq, x2)?;
        let three = g.scalar(3.0);
        let g2 = g.sub(s2, three)?;
        g.assemble(&[g1, g2])
    })?;
    let eq = AffineSet::new(Mat::from_rows(&[&[1.0, 2.0, 1.0]]), vec![2.0])?;
    let cnlp = Arc::new(StandardCnlp::new(objective, inequality, Some(eq.clone()), None)?);

    let (y0, t_final) = resolve(opts, vec![0.0; 3], 10.0);
    Ok(ExampleInstance {
        id: 6,
        name: "pseudoconvex-nonsmooth-program",
        dim: 3,
        field: VectorField::xu2020(&cnlp, &y0)?,
        epsilon: EpsilonEval {
            projection: Projection::AffinePrefix(eq),
            kind: EpsilonKind::Objective {
                problem: Arc::clone(&cnlp),
                feas_tol: FEASIBILITY_TOL,
            },
        },
        problem: ProblemKind::Cnlp(cnlp),
        y0,
        t_final,
        reference: vec![-0.44, 1.84, -1.24],
        reference_value: -11.992,
        note: "best trained solution at 2-decimal precision; objective -11.992",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use crate::problems::npe_residual;
    use crate::trainer::pointwise_loss;

    #[test]
    fn all_references_verify() {
        for inst in all_examples().unwrap() {
            let report = inst.verify_reference();
            assert!(report.pass, "example {}: {}", inst.id, report.detail);
        }
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        assert!(matches!(load_example(0), Err(BenchmarkError::OutOfRange(0))));
        assert!(matches!(load_example(7), Err(BenchmarkError::OutOfRange(7))));
    }

    #[test]
    fn initial_points_and_horizons_are_standard() {
        let dims = [5, 4, 4, 3, 4, 3];
        for (i, inst) in all_examples().unwrap().iter().enumerate() {
            assert_eq!(inst.dim, dims[i]);
            assert_eq!(inst.y0, vec![0.0; dims[i]]);
            assert_eq!(inst.t_final, 10.0);
            assert_eq!(inst.field.dim(), inst.dim);
        }
    }

    #[test]
    fn stored_references_match_the_published_values() {
        assert_eq!(
            load_example(1).unwrap().reference,
            vec![0.82, 1.65, 0.00, 0.10, 0.00]
        );
        assert_eq!(load_example(4).unwrap().reference, vec![0.00, 0.17, 0.00]);
        assert_eq!(load_example(6).unwrap().reference_value, -11.992);
    }

    #[test]
    fn quadratic_program_npe_map_is_affine() {
        // reconstruct M and q from the map and compare with the block
        // assembly [[Q, C^T], [-C, 0]], [p; d] exactly
        let inst = load_example(1).unwrap();
        let npe = match &inst.problem {
            ProblemKind::Npe(p) => Arc::clone(p),
            _ => unreachable!(),
        };
        let q_expect = [-30.0, -30.0, 15.0, -5.0, 1.0];
        let m_expect = [
            [18.0, 9.0, 13.0, 4.0, -5.0],
            [9.0, 14.0, 6.0, -5.0, -2.0],
            [13.0, 6.0, 10.0, -4.0, -4.0],
            [-4.0, 5.0, 4.0, 0.0, 0.0],
            [5.0, 2.0, 4.0, 0.0, 0.0],
        ];
        let q = npe.g_value(&[0.0; 5]);
        assert_eq!(q, q_expect);
        for col in 0..5 {
            let mut e = vec![0.0; 5];
            e[col] = 1.0;
            let ge = npe.g_value(&e);
            for row in 0..5 {
                assert_eq!(
                    ge[row] - q[row],
                    m_expect[row][col],
                    "M[{row}][{col}]"
                );
            }
        }
    }

    #[test]
    fn quadratic_program_field_at_origin_is_minus_q() {
        let inst = load_example(1).unwrap();
        let v = inst.field.eval(0.0, &[0.0; 5]);
        assert_eq!(v, vec![30.0, 30.0, -15.0, 5.0, -1.0]);
    }

    #[test]
    fn untrained_loss_at_origin_matches_hand_value() {
        // zero parameters: residual at t = 0 is ||Phi(y0)|| = ||q|| = sqrt(2051)
        let inst = load_example(1).unwrap();
        let net = StateNet::new(MlpParams::zeros(5, 4), inst.y0.clone(), inst.t_final);
        let loss = pointwise_loss(0.0, &net, &inst.field, 0.5);
        assert!((loss - 2051f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kkt_point_of_example2_is_an_exact_fixed_point() {
        let inst = load_example(2).unwrap();
        assert_eq!(inst.epsilon_of(&[1.0, 2.0, 0.0, 1.0]), 0.0);
        // the box combines x in [0,2]^2 with nonnegative duals
        let npe = match &inst.problem {
            ProblemKind::Npe(p) => Arc::clone(p),
            _ => unreachable!(),
        };
        assert_eq!(npe.omega().lower(), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(npe.omega().upper()[..2], [2.0, 2.0]);
        assert!(npe.omega().upper()[2..].iter().all(|u| u.is_infinite()));
    }

    #[test]
    fn variational_inequality_reference_residual_is_tiny() {
        let inst = load_example(3).unwrap();
        assert!(inst.epsilon_of(&inst.reference) <= 0.01);
    }

    #[test]
    fn variational_inequality_equilibrium_state_is_stationary() {
        // the flow's equilibrium is the pre-projection state y* - G(y*);
        // the field there is small (reference is printed at 2 decimals)
        let inst = load_example(3).unwrap();
        let npe = match &inst.problem {
            ProblemKind::Npe(p) => Arc::clone(p),
            _ => unreachable!(),
        };
        let g = npe.g_value(&inst.reference);
        let state: Vec<f64> = inst.reference.iter().zip(&g).map(|(y, gi)| y - gi).collect();
        let v = inst.field.eval(0.0, &state);
        assert!(norm2(&v) <= 0.1, "field norm {}", norm2(&v));
    }

    #[test]
    fn complementarity_metric_values() {
        let inst = load_example(4).unwrap();
        let npe = match &inst.problem {
            ProblemKind::Npe(p) => Arc::clone(p),
            _ => unreachable!(),
        };
        // at the origin: F(0) = [1, 3 - 2e, 0], so the residual keeps only
        // the positive part of -F and the metric is 2e - 3
        let eps0 = inst.epsilon_of(&[0.0, 0.0, 0.0]);
        let expect = 2.0 * std::f64::consts::E - 3.0;
        assert!((eps0 - expect).abs() < 1e-12, "{eps0} vs {expect}");
        // complementarity of the reference solution, checked directly
        let f = npe.g_value(&inst.reference);
        assert!(f.iter().all(|fi| *fi >= -0.05));
        let slack: f64 = inst.reference.iter().zip(&f).map(|(y, fi)| y * fi).sum();
        assert!(slack.abs() <= 0.05);
        // residual at the reference stays inside the registry tolerance
        assert!(norm2(&npe_residual(&inst.reference, &npe, 1.0)) <= REFERENCE_TOL);
    }

    #[test]
    fn nonsmooth_program_objective_at_projected_reference() {
        let inst = load_example(5).unwrap();
        // raw reference misses the equality by ~0.02; projection repairs it
        let eps = inst.epsilon_of(&inst.reference);
        assert!(
            (eps - 39.020).abs() <= REFERENCE_TOL,
            "objective {eps}"
        );
        // dual rest: g(x*) < 0 and u = 0, so du/dt = 0 at the reference
        let v = inst.field.eval(0.0, &inst.reference);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn nonsmooth_program_rejects_infeasible_points() {
        let inst = load_example(5).unwrap();
        let cnlp = match &inst.problem {
            ProblemKind::Cnlp(p) => Arc::clone(p),
            _ => unreachable!(),
        };
        // far outside the inequality: (x1+3)^2 + x2 > 36
        let eps = crate::trainer::epsilon_objective(&[5.0, 5.0, -0.6, 0.0], &cnlp, 1e-6);
        assert_eq!(eps, f64::INFINITY);
    }

    #[test]
    fn pseudoconvex_program_reference_objective() {
        let inst = load_example(6).unwrap();
        let eps = inst.epsilon_of(&inst.reference);
        assert!((eps - (-11.992)).abs() <= REFERENCE_TOL, "objective {eps}");
        // gate time: 1 + 2/6
        assert!((inst.field.switch_time().unwrap() - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn pseudoconvex_gate_regions_follow_the_constraint_signs() {
        // after the switch the tangential term depends on the (g1, g2) signs:
        // probe one point per region and check the pieces by hand
        let inst = load_example(6).unwrap();
        let cnlp = match &inst.problem {
            ProblemKind::Cnlp(p) => Arc::clone(p),
            _ => unreachable!(),
        };
        let t_after = 2.0; // past the switch at 4/3
        // both satisfied at the projected start point: pure descent
        let x_in = [1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        let g_in = cnlp.inequality_values(&x_in);
        assert!(g_in.iter().all(|v| *v < 0.0));
        let v_in = inst.field.eval(t_after, &x_in);
        assert!(v_in.iter().any(|c| c.abs() > 1e-9));
        // g2 violated at x = (2, 2, -4) (on the equality manifold):
        // feasibility pull only, direction -(I-U) grad g2
        let x_g2: [f64; 3] = [2.0, 2.0, -4.0];
        assert!((x_g2[0] + 2.0 * x_g2[1] + x_g2[2] - 2.0).abs() < 1e-12);
        let g_v = cnlp.inequality_values(&x_g2);
        assert!(g_v[0] < 0.0 && g_v[1] > 0.0);
        let v = inst.field.eval(t_after, &x_g2);
        // grad g2 = [2 x1, 1, 0] = [4, 1, 0]; (I-U) with A = [1,2,1]/6
        let grad_g2 = [4.0, 1.0, 0.0];
        let a = [1.0, 2.0, 1.0];
        let a_dot: f64 = a.iter().zip(&grad_g2).map(|(ai, gi)| ai * gi).sum();
        let expect: Vec<f64> = grad_g2
            .iter()
            .zip(&a)
            .map(|(gi, ai)| -(gi - ai * a_dot / 6.0))
            .collect();
        for (got, want) in v.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn perturbed_references_fail_verification() {
        for id in [2u8, 5u8] {
            let mut inst = load_example(id).unwrap();
            inst.reference[0] += 1.0;
            let report = inst.verify_reference();
            assert!(!report.pass, "example {id} should fail after perturbation");
        }
    }

    #[test]
    fn sweep_overrides_are_applied() {
        let opts = ExampleOptions {
            y0: Some(vec![1.0, 2.0, 3.0, 4.0]),
            t_final: Some(8.0),
        };
        let inst = load_example_with(3, &opts).unwrap();
        assert_eq!(inst.y0, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(inst.t_final, 8.0);
        let net = inst.make_net(16, 1);
        assert_eq!(net.forward(0.0), inst.y0);
    }
}
