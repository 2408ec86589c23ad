//! Neurodynamic optimization toolkit.
//!
//! Constrained nonlinear problems (nonlinear projection equations, variational
//! inequalities, complementarity problems, and standard constrained programs)
//! are recast as initial value problems whose state solutions converge to the
//! problem solution. The resulting IVPs are solved two ways:
//!
//! * by training a small neural approximate state solution on the ODE
//!   residual ([`trainer`]), with best-solution tracking driven by a
//!   solution-quality metric, and
//! * by classical explicit Runge-Kutta integration ([`integrators`]).
//!
//! [`benchmarks`] registers six reference problem instances with known
//! solutions; the `neurodyn` binary exposes training, integration, comparison,
//! and hyperparameter sweeps over them.

pub mod autodiff;
pub mod benchmarks;
pub mod cli;
pub mod dynamics;
pub mod integrators;
pub mod linalg;
pub mod model;
pub mod problems;
pub mod trainer;
