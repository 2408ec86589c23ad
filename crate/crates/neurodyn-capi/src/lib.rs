//! C ABI for the neurodyn solver toolkit.
//!
//! Benchmark instances are exposed through an opaque handle created by
//! [`neurodyn_example_new`] and released by [`neurodyn_example_free`]. All
//! other entry points take the handle plus caller-owned buffers and return a
//! [`NeurodynStatus`] code; no Rust object other than the handle crosses the
//! boundary. The header `include/neurodyn.h` is generated by cbindgen at
//! build time.

use std::ffi::c_char;

use neurodyn::benchmarks::{load_example, ExampleInstance};
use neurodyn::integrators::{
    integrate_adaptive, integrate_fixed_thinned, AdaptiveMethod, FixedMethod, StepControl,
    TrajectoryStatus,
};
use neurodyn::trainer::{train, TrainConfig};

/// Result code for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeurodynStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    NumericalFailure = 4,
}

/// Fixed-step integration scheme.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeurodynFixedMethod {
    Euler = 0,
    Rk4 = 1,
}

/// Embedded-pair adaptive scheme.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeurodynAdaptiveMethod {
    Rk45 = 0,
    Rk23 = 1,
}

/// Opaque benchmark-instance handle.
pub struct NeurodynExample {
    inner: ExampleInstance,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn neurodyn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Create the benchmark instance with the given id (1..=6).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_example_new(
    id: u8,
    out: *mut *mut NeurodynExample,
) -> NeurodynStatus {
    if out.is_null() {
        return NeurodynStatus::NullPointer;
    }
    match load_example(id) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(NeurodynExample { inner }));
            NeurodynStatus::Ok
        }
        Err(_) => NeurodynStatus::OutOfRange,
    }
}

/// Release a handle returned by [`neurodyn_example_new`]. Null is a no-op.
///
/// # Safety
/// `ex` must be null or a pointer previously returned by
/// [`neurodyn_example_new`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_example_free(ex: *mut NeurodynExample) {
    if !ex.is_null() {
        drop(Box::from_raw(ex));
    }
}

/// State dimension of the instance; 0 if the handle is null.
///
/// # Safety
/// `ex` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_example_dim(ex: *const NeurodynExample) -> usize {
    match ex.as_ref() {
        Some(ex) => ex.inner.dim,
        None => 0,
    }
}

/// Copy the instance's reference solution into `out` (length `len` must
/// equal the state dimension).
///
/// # Safety
/// `ex` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_example_reference(
    ex: *const NeurodynExample,
    out: *mut f64,
    len: usize,
) -> NeurodynStatus {
    let Some(ex) = ex.as_ref() else {
        return NeurodynStatus::NullPointer;
    };
    if out.is_null() {
        return NeurodynStatus::NullPointer;
    }
    if len != ex.inner.dim {
        return NeurodynStatus::InvalidArgument;
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(&ex.inner.reference);
    NeurodynStatus::Ok
}

/// Solution-quality metric of a candidate state: the instance's endpoint
/// projection is applied first, then the metric (residual norm or
/// feasibility-gated objective) is evaluated. An infeasible objective comes
/// back as +infinity, not an error.
///
/// # Safety
/// `ex` must be a live handle, `y` must point to `len` readable doubles, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_example_epsilon(
    ex: *const NeurodynExample,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> NeurodynStatus {
    let Some(ex) = ex.as_ref() else {
        return NeurodynStatus::NullPointer;
    };
    if y.is_null() || out.is_null() {
        return NeurodynStatus::NullPointer;
    }
    if len != ex.inner.dim {
        return NeurodynStatus::InvalidArgument;
    }
    let state = std::slice::from_raw_parts(y, len);
    *out = ex.inner.epsilon_of(state);
    NeurodynStatus::Ok
}

/// Integrate the instance's ODE system with a fixed step to its horizon and
/// write the projected endpoint into `endpoint`.
///
/// # Safety
/// `ex` must be a live handle and `endpoint` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_integrate_fixed(
    ex: *const NeurodynExample,
    method: NeurodynFixedMethod,
    step: f64,
    endpoint: *mut f64,
    len: usize,
) -> NeurodynStatus {
    let Some(ex) = ex.as_ref() else {
        return NeurodynStatus::NullPointer;
    };
    if endpoint.is_null() {
        return NeurodynStatus::NullPointer;
    }
    if len != ex.inner.dim || step.is_nan() || step <= 0.0 {
        return NeurodynStatus::InvalidArgument;
    }
    let method = match method {
        NeurodynFixedMethod::Euler => FixedMethod::Euler,
        NeurodynFixedMethod::Rk4 => FixedMethod::Rk4,
    };
    let inst = &ex.inner;
    // endpoint-only run: thin aggressively to keep memory flat
    let traj = integrate_fixed_thinned(&inst.field, &inst.y0, inst.t_final, step, method, 4096);
    if traj.status() != TrajectoryStatus::Completed {
        return NeurodynStatus::NumericalFailure;
    }
    let projected = inst.project(traj.last_state());
    std::slice::from_raw_parts_mut(endpoint, len).copy_from_slice(&projected);
    NeurodynStatus::Ok
}

/// Adaptive integration to the instance horizon; failure (for example the
/// stiff instance under tight tolerances) is reported as a status code.
///
/// # Safety
/// `ex` must be a live handle and `endpoint` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_integrate_adaptive(
    ex: *const NeurodynExample,
    method: NeurodynAdaptiveMethod,
    rtol: f64,
    atol: f64,
    endpoint: *mut f64,
    len: usize,
) -> NeurodynStatus {
    let Some(ex) = ex.as_ref() else {
        return NeurodynStatus::NullPointer;
    };
    if endpoint.is_null() {
        return NeurodynStatus::NullPointer;
    }
    if len != ex.inner.dim || rtol.is_nan() || rtol <= 0.0 || atol.is_nan() || atol <= 0.0 {
        return NeurodynStatus::InvalidArgument;
    }
    let method = match method {
        NeurodynAdaptiveMethod::Rk45 => AdaptiveMethod::Rk45,
        NeurodynAdaptiveMethod::Rk23 => AdaptiveMethod::Rk23,
    };
    let ctrl = StepControl {
        rtol,
        atol,
        ..Default::default()
    };
    let inst = &ex.inner;
    let traj = integrate_adaptive(&inst.field, &inst.y0, inst.t_final, &ctrl, method);
    if traj.status() != TrajectoryStatus::Completed {
        return NeurodynStatus::NumericalFailure;
    }
    let projected = inst.project(traj.last_state());
    std::slice::from_raw_parts_mut(endpoint, len).copy_from_slice(&projected);
    NeurodynStatus::Ok
}

/// Train the neural state solution on the instance and write the metric-best
/// projected solution into `solution` and its metric value into
/// `epsilon_best`. `batch` and `hidden` of 0 select the defaults (512, 100).
///
/// # Safety
/// `ex` must be a live handle, `solution` must point to `len` writable
/// doubles, and `epsilon_best` must be writable.
#[no_mangle]
pub unsafe extern "C" fn neurodyn_train(
    ex: *const NeurodynExample,
    seed: u64,
    iters: usize,
    batch: usize,
    hidden: usize,
    solution: *mut f64,
    len: usize,
    epsilon_best: *mut f64,
) -> NeurodynStatus {
    let Some(ex) = ex.as_ref() else {
        return NeurodynStatus::NullPointer;
    };
    if solution.is_null() || epsilon_best.is_null() {
        return NeurodynStatus::NullPointer;
    }
    if len != ex.inner.dim {
        return NeurodynStatus::InvalidArgument;
    }
    let inst = &ex.inner;
    let hidden = if hidden == 0 { 100 } else { hidden };
    let cfg = TrainConfig {
        seed,
        max_iters: iters,
        batch_size: if batch == 0 { 512 } else { batch },
        horizon: inst.t_final,
        ..Default::default()
    };
    let net = inst.make_net(hidden, seed);
    match train(&inst.field, &net, &inst.epsilon, &cfg, None) {
        Ok(report) => {
            std::slice::from_raw_parts_mut(solution, len).copy_from_slice(&report.best_solution);
            *epsilon_best = report.epsilon_best;
            NeurodynStatus::Ok
        }
        Err(_) => NeurodynStatus::NumericalFailure,
    }
}
