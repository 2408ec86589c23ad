//! Exercises the C entry points from Rust, including the error paths a
//! foreign caller can hit.

use neurodyn_capi::*;
use std::ptr;

fn new_example(id: u8) -> *mut NeurodynExample {
    let mut handle: *mut NeurodynExample = ptr::null_mut();
    let status = unsafe { neurodyn_example_new(id, &mut handle) };
    assert_eq!(status, NeurodynStatus::Ok);
    assert!(!handle.is_null());
    handle
}

#[test]
fn version_is_a_nul_terminated_string() {
    let p = neurodyn_version();
    assert!(!p.is_null());
    let s = unsafe { std::ffi::CStr::from_ptr(p) }.to_str().unwrap();
    assert!(s.starts_with("0."));
}

#[test]
fn lifecycle_and_reference_round_trip() {
    let ex = new_example(2);
    unsafe {
        assert_eq!(neurodyn_example_dim(ex), 4);
        let mut reference = [0.0; 4];
        assert_eq!(
            neurodyn_example_reference(ex, reference.as_mut_ptr(), 4),
            NeurodynStatus::Ok
        );
        assert_eq!(reference, [1.0, 2.0, 0.0, 1.0]);
        // the exact fixed point scores zero
        let mut eps = f64::NAN;
        assert_eq!(
            neurodyn_example_epsilon(ex, reference.as_ptr(), 4, &mut eps),
            NeurodynStatus::Ok
        );
        assert_eq!(eps, 0.0);
        neurodyn_example_free(ex);
    }
}

#[test]
fn bad_ids_and_null_pointers_are_status_codes() {
    let mut handle: *mut NeurodynExample = ptr::null_mut();
    unsafe {
        assert_eq!(
            neurodyn_example_new(9, &mut handle),
            NeurodynStatus::OutOfRange
        );
        assert_eq!(
            neurodyn_example_new(1, ptr::null_mut()),
            NeurodynStatus::NullPointer
        );
        assert_eq!(neurodyn_example_dim(ptr::null()), 0);

        let ex = new_example(1);
        let mut buf = [0.0; 3]; // wrong length for a 5-dimensional instance
        assert_eq!(
            neurodyn_example_reference(ex, buf.as_mut_ptr(), 3),
            NeurodynStatus::InvalidArgument
        );
        let mut eps = 0.0;
        assert_eq!(
            neurodyn_example_epsilon(ex, ptr::null(), 5, &mut eps),
            NeurodynStatus::NullPointer
        );
        neurodyn_example_free(ex);
        neurodyn_example_free(ptr::null_mut()); // no-op
    }
}

#[test]
fn fixed_integration_reaches_the_reference() {
    let ex = new_example(1);
    unsafe {
        let mut endpoint = [0.0; 5];
        let status = neurodyn_integrate_fixed(
            ex,
            NeurodynFixedMethod::Rk4,
            1e-3,
            endpoint.as_mut_ptr(),
            5,
        );
        assert_eq!(status, NeurodynStatus::Ok);
        let expected = [0.82, 1.65, 0.00, 0.10, 0.00];
        for (a, e) in endpoint.iter().zip(&expected) {
            assert!((a - e).abs() <= 0.05, "{endpoint:?}");
        }
        assert_eq!(
            neurodyn_integrate_fixed(ex, NeurodynFixedMethod::Rk4, -1.0, endpoint.as_mut_ptr(), 5),
            NeurodynStatus::InvalidArgument
        );
        neurodyn_example_free(ex);
    }
}

#[test]
fn adaptive_integration_reports_stiff_failure() {
    let ex = new_example(6);
    unsafe {
        let mut endpoint = [0.0; 3];
        // tight tolerances: the stiff instance cannot finish
        let status = neurodyn_integrate_adaptive(
            ex,
            NeurodynAdaptiveMethod::Rk45,
            1e-6,
            1e-9,
            endpoint.as_mut_ptr(),
            3,
        );
        assert_eq!(status, NeurodynStatus::NumericalFailure);
        // loose classic tolerances complete
        let status = neurodyn_integrate_adaptive(
            ex,
            NeurodynAdaptiveMethod::Rk45,
            1e-3,
            1e-6,
            endpoint.as_mut_ptr(),
            3,
        );
        assert_eq!(status, NeurodynStatus::Ok);
        assert!(endpoint.iter().all(|v| v.is_finite()));
        neurodyn_example_free(ex);
    }
}

#[test]
fn short_training_runs_through_the_boundary() {
    let ex = new_example(4);
    unsafe {
        let mut solution = [0.0; 3];
        let mut eps = f64::NAN;
        let status = neurodyn_train(ex, 1, 50, 32, 16, solution.as_mut_ptr(), 3, &mut eps);
        assert_eq!(status, NeurodynStatus::Ok);
        assert!(eps.is_finite());
        assert!(solution.iter().all(|v| v.is_finite()));
        neurodyn_example_free(ex);
    }
}
