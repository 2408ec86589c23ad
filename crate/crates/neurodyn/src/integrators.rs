//! Explicit numerical integration of the neurodynamic IVPs: classical
//! fixed-step Euler and RK4, plus embedded-pair adaptive methods
//! (Dormand-Prince 5(4) and Bogacki-Shampine 3(2)).
//!
//! Discontinuous right-hand sides are integrated as-is; the adaptive
//! controller shrinks steps near switching surfaces and the minimum-step
//! guard converts pathological stiffness into an explicit failure status
//! instead of a hang. Fields with a known switching time additionally cap
//! the step to a tenth of it beforehand so the switch is not stepped over.

use thiserror::Error;

use crate::dynamics::VectorField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Completed,
    /// The controller needed a step below the minimum (or ran out of its
    /// step budget); the analogue of a failed stiff run.
    StepUnderflow,
    /// A step produced a non-finite state; the offending step is excluded.
    NonFiniteState,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("endpoint unavailable: trajectory terminated with {0:?}")]
    Unavailable(TrajectoryStatus),
}

/// Ordered (time, state) samples from an integrator run, starting at t = 0.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    status: TrajectoryStatus,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn status(&self) -> TrajectoryStatus {
        self.status
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds y0")
    }

    /// Final state of a completed run; failed runs surface their status.
    pub fn endpoint(&self) -> Result<&[f64], TrajectoryError> {
        match self.status {
            TrajectoryStatus::Completed => Ok(self.last_state()),
            other => Err(TrajectoryError::Unavailable(other)),
        }
    }
}

/// Error-control settings for the adaptive methods.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub safety: f64,
    /// Hard cap on attempted steps; exhausting it reports StepUnderflow.
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-6,
            atol: 1e-9,
            min_step: 1e-12,
            max_step: f64::INFINITY,
            safety: 0.9,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedMethod {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptiveMethod {
    /// Dormand-Prince 5(4).
    Rk45,
    /// Bogacki-Shampine 3(2).
    Rk23,
}

fn all_finite(y: &[f64]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// Classical fixed-step integration on [0, t_end], sampling every step.
pub fn integrate_fixed(
    field: &VectorField,
    y0: &[f64],
    t_end: f64,
    h: f64,
    method: FixedMethod,
) -> Trajectory {
    integrate_fixed_thinned(field, y0, t_end, h, method, 1)
}

/// Fixed-step integration storing every `thin`-th sample (the final state is
/// always stored), for runs where T/h is large.
pub fn integrate_fixed_thinned(
    field: &VectorField,
    y0: &[f64],
    t_end: f64,
    h: f64,
    method: FixedMethod,
    thin: usize,
) -> Trajectory {
    assert!(h > 0.0, "step size must be positive");
    assert!(t_end > 0.0, "final time must be positive");
    assert!(thin >= 1, "thinning stride must be at least 1");
    assert_eq!(y0.len(), field.dim(), "initial state dimension mismatch");

    let mut eval = field.evaluator();
    let n = y0.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];

    let mut times = vec![0.0];
    let mut states = vec![y0.to_vec()];
    let mut y = y0.to_vec();
    let mut step = 0usize;
    loop {
        let t = step as f64 * h;
        if t >= t_end {
            break;
        }
        let hs = if t + h > t_end { t_end - t } else { h };
        match method {
            FixedMethod::Euler => {
                eval.eval_into(t, &y, &mut k1);
                for i in 0..n {
                    y[i] += hs * k1[i];
                }
            }
            FixedMethod::Rk4 => {
                eval.eval_into(t, &y, &mut k1);
                for i in 0..n {
                    stage[i] = y[i] + 0.5 * hs * k1[i];
                }
                eval.eval_into(t + 0.5 * hs, &stage, &mut k2);
                for i in 0..n {
                    stage[i] = y[i] + 0.5 * hs * k2[i];
                }
                eval.eval_into(t + 0.5 * hs, &stage, &mut k3);
                for i in 0..n {
                    stage[i] = y[i] + hs * k3[i];
                }
                eval.eval_into(t + hs, &stage, &mut k4);
                for i in 0..n {
                    y[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        step += 1;
        let t_next = (step as f64 * h).min(t_end);
        if !all_finite(&y) {
            return Trajectory {
                times,
                states,
                status: TrajectoryStatus::NonFiniteState,
            };
        }
        if step.is_multiple_of(thin) || t_next >= t_end {
            times.push(t_next);
            states.push(y.clone());
        }
    }
    Trajectory {
        times,
        states,
        status: TrajectoryStatus::Completed,
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

// Bogacki-Shampine 3(2) tableau.
const BS_C: [f64; 4] = [0.0, 0.5, 0.75, 1.0];
const BS_A: [[f64; 3]; 3] = [
    [0.5, 0.0, 0.0],
    [0.0, 0.75, 0.0],
    [2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0],
];
const BS_B3: [f64; 4] = [2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0];
const BS_B2: [f64; 4] = [7.0 / 24.0, 0.25, 1.0 / 3.0, 0.125];

/// Embedded-pair adaptive integration on [0, t_end]; accepted steps are
/// appended to the trajectory and the final step lands exactly on t_end.
pub fn integrate_adaptive(
    field: &VectorField,
    y0: &[f64],
    t_end: f64,
    ctrl: &StepControl,
    method: AdaptiveMethod,
) -> Trajectory {
    assert!(t_end > 0.0, "final time must be positive");
    assert!(ctrl.rtol > 0.0 && ctrl.atol > 0.0, "tolerances must be positive");
    assert!(ctrl.min_step > 0.0 && ctrl.min_step < ctrl.max_step);
    assert_eq!(y0.len(), field.dim(), "initial state dimension mismatch");

    let (stages, order): (usize, f64) = match method {
        AdaptiveMethod::Rk45 => (7, 5.0),
        AdaptiveMethod::Rk23 => (4, 3.0),
    };
    let n = y0.len();
    let mut eval = field.evaluator();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; stages];
    let mut stage_y = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    let mut times = vec![0.0];
    let mut states = vec![y0.to_vec()];
    let mut y = y0.to_vec();
    let mut t = 0.0;

    let switch = field.switch_time().filter(|s| *s > 0.0 && *s < t_end);
    let cap = |t: f64, h: f64| -> f64 {
        let mut h = h.min(ctrl.max_step).min(t_end - t);
        if let Some(s) = switch {
            if t < s {
                h = h.min(s / 10.0).min(s - t);
            }
        }
        h.max(0.0)
    };

    let mut h = cap(0.0, t_end / 100.0);
    // first stage (FSAL slot) seeded once
    eval.eval_into(t, &y, &mut k[0]);
    let mut attempts = 0usize;
    while t < t_end {
        attempts += 1;
        if attempts > ctrl.max_steps {
            return Trajectory {
                times,
                states,
                status: TrajectoryStatus::StepUnderflow,
            };
        }
        let hs = cap(t, h);
        // build stages; the last stage of both pairs sits at the candidate y
        let last = stages - 1;
        for s in 1..stages {
            let (c, arow): (f64, &[f64]) = match method {
                AdaptiveMethod::Rk45 => (DP_C[s], &DP_A[s - 1]),
                AdaptiveMethod::Rk23 => (BS_C[s], &BS_A[s - 1]),
            };
            for i in 0..n {
                let mut acc = 0.0;
                for (j, aj) in arow.iter().take(s).enumerate() {
                    acc += aj * k[j][i];
                }
                stage_y[i] = y[i] + hs * acc;
            }
            if s == last {
                y_new.copy_from_slice(&stage_y);
            }
            eval.eval_into(t + c * hs, &stage_y, &mut k[s]);
        }
        // error estimate: h * sum (b_high - b_low) k
        let mut err_norm_sq = 0.0;
        let mut finite = all_finite(&y_new);
        if finite {
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..stages {
                    let (bh, bl) = match method {
                        AdaptiveMethod::Rk45 => (DP_B5[s], DP_B4[s]),
                        AdaptiveMethod::Rk23 => (BS_B3[s], BS_B2[s]),
                    };
                    e += (bh - bl) * k[s][i];
                }
                e *= hs;
                let scale = ctrl.atol + ctrl.rtol * y[i].abs().max(y_new[i].abs());
                err_norm_sq += (e / scale) * (e / scale);
            }
            finite = err_norm_sq.is_finite();
        }
        let err = if finite {
            (err_norm_sq / n as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            // a controller-chosen (unclipped) step below the minimum means
            // the run is creeping, not progressing
            if hs < ctrl.min_step && hs >= h {
                return Trajectory {
                    times,
                    states,
                    status: TrajectoryStatus::StepUnderflow,
                };
            }
            t += hs;
            y.copy_from_slice(&y_new);
            times.push(t.min(t_end));
            states.push(y.clone());
            // FSAL: the last stage is f(t_new, y_new)
            let (head, tail) = k.split_at_mut(stages - 1);
            head[0].copy_from_slice(&tail[0]);
            let factor = if err == 0.0 {
                5.0
            } else {
                (ctrl.safety * err.powf(-1.0 / order)).clamp(0.2, 5.0)
            };
            h = (hs * factor).min(ctrl.max_step);
            if t >= t_end {
                break;
            }
            // a gated field changes branch at the switch; re-seed the FSAL
            // stage there so the cached derivative is not stale
            if let Some(s) = switch {
                if (t - s).abs() < 1e-15 {
                    eval.eval_into(t, &y, &mut k[0]);
                }
            }
        } else {
            let factor = (ctrl.safety * err.powf(-1.0 / order)).clamp(0.2, 1.0);
            h = hs * factor;
            if h < ctrl.min_step {
                return Trajectory {
                    times,
                    states,
                    status: TrajectoryStatus::StepUnderflow,
                };
            }
        }
        if h < ctrl.min_step {
            h = ctrl.min_step;
        }
    }
    Trajectory {
        times,
        states,
        status: TrajectoryStatus::Completed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ExprError, Graph, NodeId};

    fn decay_field() -> VectorField {
        // dy/dt = -y
        VectorField::from_builder(1, "decay", false, None, |g: &mut Graph, y, _t| {
            Ok::<NodeId, ExprError>(g.neg(y))
        })
        .unwrap()
    }

    fn endpoint_error(method: FixedMethod, h: f64) -> f64 {
        let f = decay_field();
        let traj = integrate_fixed(&f, &[1.0], 1.0, h, method);
        (traj.endpoint().unwrap()[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn rk4_hits_the_exponential() {
        assert!(endpoint_error(FixedMethod::Rk4, 0.01) < 1e-8);
    }

    #[test]
    fn measured_orders_of_accuracy() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        for (method, floor) in [(FixedMethod::Rk4, 3.8), (FixedMethod::Euler, 0.9)] {
            let errs: Vec<f64> = hs.iter().map(|&h| endpoint_error(method, h)).collect();
            let mut orders = Vec::new();
            for w in errs.windows(2) {
                orders.push((w[0] / w[1]).log2());
            }
            let mean = orders.iter().sum::<f64>() / orders.len() as f64;
            assert!(mean >= floor, "{method:?}: measured order {mean}");
        }
    }

    #[test]
    fn halving_the_step_divides_rk4_error_by_about_sixteen() {
        let e1 = endpoint_error(FixedMethod::Rk4, 0.1);
        let e2 = endpoint_error(FixedMethod::Rk4, 0.05);
        let ratio = e1 / e2;
        assert!((10.0..24.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn adaptive_defaults_hit_the_exponential() {
        let f = decay_field();
        for method in [AdaptiveMethod::Rk45, AdaptiveMethod::Rk23] {
            let traj = integrate_adaptive(&f, &[1.0], 1.0, &StepControl::default(), method);
            let err = (traj.endpoint().unwrap()[0] - (-1.0f64).exp()).abs();
            assert!(err < 1e-6, "{method:?}: {err}");
        }
    }

    #[test]
    fn adaptive_error_tracks_requested_tolerance() {
        let f = decay_field();
        for &rtol in &[1e-4, 1e-6, 1e-8] {
            let ctrl = StepControl {
                rtol,
                atol: rtol * 1e-3,
                ..Default::default()
            };
            let traj = integrate_adaptive(&f, &[1.0], 1.0, &ctrl, AdaptiveMethod::Rk45);
            let got = traj.endpoint().unwrap()[0];
            let rel = (got - (-1.0f64).exp()).abs() / (-1.0f64).exp();
            assert!(rel < 10.0 * rtol, "rtol {rtol}: rel err {rel}");
        }
    }

    #[test]
    fn trajectories_start_at_the_initial_state() {
        let f = decay_field();
        let traj = integrate_fixed(&f, &[1.0], 1.0, 0.1, FixedMethod::Euler);
        assert_eq!(traj.times()[0], 0.0);
        assert_eq!(traj.states()[0], vec![1.0]);
        assert_eq!(*traj.times().last().unwrap(), 1.0);
    }

    #[test]
    fn thinning_keeps_the_final_sample() {
        let f = decay_field();
        let traj = integrate_fixed_thinned(&f, &[1.0], 1.0, 0.1, FixedMethod::Rk4, 3);
        assert_eq!(traj.times()[0], 0.0);
        assert!((traj.times()[1] - 0.3).abs() < 1e-12);
        assert_eq!(*traj.times().last().unwrap(), 1.0);
        assert_eq!(traj.status(), TrajectoryStatus::Completed);
    }

    #[test]
    fn runs_are_bit_deterministic() {
        let f = decay_field();
        let a = integrate_adaptive(&f, &[1.0], 1.0, &StepControl::default(), AdaptiveMethod::Rk45);
        let b = integrate_adaptive(&f, &[1.0], 1.0, &StepControl::default(), AdaptiveMethod::Rk45);
        assert_eq!(a.times(), b.times());
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn split_integration_matches_whole_for_autonomous_fields() {
        // integrate [0, 1] then [1, 2] from the endpoint vs [0, 2] directly;
        // the field is autonomous so the restart is exact up to tolerance
        let f = decay_field();
        let ctrl = StepControl::default();
        let whole = integrate_adaptive(&f, &[1.0], 2.0, &ctrl, AdaptiveMethod::Rk45);
        let first = integrate_adaptive(&f, &[1.0], 1.0, &ctrl, AdaptiveMethod::Rk45);
        let second = integrate_adaptive(
            &f,
            first.endpoint().unwrap(),
            1.0,
            &ctrl,
            AdaptiveMethod::Rk45,
        );
        let a = whole.endpoint().unwrap()[0];
        let b = second.endpoint().unwrap()[0];
        assert!((a - b).abs() < 5.0 * ctrl.rtol);
    }

    #[test]
    fn sliding_field_reports_underflow_not_nan() {
        // dy/dt = -sign(y): the state reaches 0 and chatters; the embedded
        // error stays O(1) there so the controller shrinks below min_step
        let f = VectorField::from_builder(1, "slide", false, None, |g: &mut Graph, y, _t| {
            let s = g.sign_select(y);
            Ok::<NodeId, ExprError>(g.neg(s))
        })
        .unwrap();
        let traj =
            integrate_adaptive(&f, &[1.0], 10.0, &StepControl::default(), AdaptiveMethod::Rk45);
        assert_eq!(traj.status(), TrajectoryStatus::StepUnderflow);
        assert!(traj.states().iter().all(|s| s.iter().all(|v| v.is_finite())));
        assert!(traj.endpoint().is_err());
    }

    #[test]
    fn non_finite_states_truncate_fixed_runs() {
        // dy/dt = y^2 from y0 = 1 blows up at t = 1
        let f = VectorField::from_builder(1, "blowup", false, None, |g: &mut Graph, y, _t| {
            g.mul(y, y)
        })
        .unwrap();
        let traj = integrate_fixed(&f, &[1.0], 2.0, 0.001, FixedMethod::Euler);
        assert_eq!(traj.status(), TrajectoryStatus::NonFiniteState);
        assert!(traj.states().iter().all(|s| s.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn endpoint_of_single_step_run() {
        let f = decay_field();
        let traj = integrate_fixed(&f, &[1.0], 0.5, 0.5, FixedMethod::Euler);
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.endpoint().unwrap(), &[0.5]);
    }
}
