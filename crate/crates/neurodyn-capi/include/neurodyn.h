#ifndef NEURODYN_H
#define NEURODYN_H

/* Generated by cbindgen from neurodyn-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code for every fallible entry point.
typedef enum NeurodynStatus {
  NeurodynStatus_Ok = 0,
  NeurodynStatus_NullPointer = 1,
  NeurodynStatus_InvalidArgument = 2,
  NeurodynStatus_OutOfRange = 3,
  NeurodynStatus_NumericalFailure = 4,
} NeurodynStatus;

// Fixed-step integration scheme.
typedef enum NeurodynFixedMethod {
  NeurodynFixedMethod_Euler = 0,
  NeurodynFixedMethod_Rk4 = 1,
} NeurodynFixedMethod;

// Embedded-pair adaptive scheme.
typedef enum NeurodynAdaptiveMethod {
  NeurodynAdaptiveMethod_Rk45 = 0,
  NeurodynAdaptiveMethod_Rk23 = 1,
} NeurodynAdaptiveMethod;

// Opaque benchmark-instance handle.
typedef struct NeurodynExample NeurodynExample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *neurodyn_version(void);

// Create the benchmark instance with the given id (1..=6).
//
// # Safety
// `out` must be a valid pointer to writable storage for one pointer.
enum NeurodynStatus neurodyn_example_new(uint8_t id, struct NeurodynExample **out);

// Release a handle returned by [`neurodyn_example_new`]. Null is a no-op.
//
// # Safety
// `ex` must be null or a pointer previously returned by
// [`neurodyn_example_new`] that has not been freed.
void neurodyn_example_free(struct NeurodynExample *ex);

// State dimension of the instance; 0 if the handle is null.
//
// # Safety
// `ex` must be null or a live handle.
uintptr_t neurodyn_example_dim(const struct NeurodynExample *ex);

// Copy the instance's reference solution into `out` (length `len` must
// equal the state dimension).
//
// # Safety
// `ex` must be a live handle and `out` must point to `len` writable doubles.
enum NeurodynStatus neurodyn_example_reference(const struct NeurodynExample *ex,
                                               double *out,
                                               uintptr_t len);

// Solution-quality metric of a candidate state: the instance's endpoint
// projection is applied first, then the metric (residual norm or
// feasibility-gated objective) is evaluated. An infeasible objective comes
// back as +infinity, not an error.
//
// # Safety
// `ex` must be a live handle, `y` must point to `len` readable doubles, and
// `out` must be writable.
enum NeurodynStatus neurodyn_example_epsilon(const struct NeurodynExample *ex,
                                             const double *y,
                                             uintptr_t len,
                                             double *out);

// Integrate the instance's ODE system with a fixed step to its horizon and
// write the projected endpoint into `endpoint`.
//
// # Safety
// `ex` must be a live handle and `endpoint` must point to `len` writable
// doubles.
enum NeurodynStatus neurodyn_integrate_fixed(const struct NeurodynExample *ex,
                                             enum NeurodynFixedMethod method,
                                             double step,
                                             double *endpoint,
                                             uintptr_t len);

// Adaptive integration to the instance horizon; failure (for example the
// stiff instance under tight tolerances) is reported as a status code.
//
// # Safety
// `ex` must be a live handle and `endpoint` must point to `len` writable
// doubles.
enum NeurodynStatus neurodyn_integrate_adaptive(const struct NeurodynExample *ex,
                                                enum NeurodynAdaptiveMethod method,
                                                double rtol,
                                                double atol,
                                                double *endpoint,
                                                uintptr_t len);

// Train the neural state solution on the instance and write the metric-best
// projected solution into `solution` and its metric value into
// `epsilon_best`. `batch` and `hidden` of 0 select the defaults (512, 100).
//
// # Safety
// `ex` must be a live handle, `solution` must point to `len` writable
// doubles, and `epsilon_best` must be writable.
enum NeurodynStatus neurodyn_train(const struct NeurodynExample *ex,
                                   uint64_t seed,
                                   uintptr_t iters,
                                   uintptr_t batch,
                                   uintptr_t hidden,
                                   double *solution,
                                   uintptr_t len,
                                   double *epsilon_best);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEURODYN_H */
