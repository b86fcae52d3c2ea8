#ifndef FRAQFLOW_H
#define FRAQFLOW_H

#include <stddef.h>
#include <stdint.h>

typedef enum FfStatus {
  FF_STATUS_OK = 0,
  FF_STATUS_NULL_POINTER = 1,
  FF_STATUS_INVALID_ARGUMENT = 2,
  FF_STATUS_DIMENSION_MISMATCH = 3,
  FF_STATUS_NON_CONVERGENCE = 4,
  FF_STATUS_NUMERICAL = 5,
  FF_STATUS_IO = 6,
  FF_STATUS_PANIC = 7,
} FfStatus;

// A grid, an operator and the current state of one evolution.
typedef struct FfFlow FfFlow;

// Norms of the current state. `rayleigh` is NaN for the zero state.
typedef struct FfEnergies {
  double t;
  double lq_norm;
  double x_energy;
  double dual_norm;
  double rayleigh;
} FfEnergies;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ff_last_error_message(char *buf, size_t len);

// Creates an evolution on `n` interior nodes of `(a, b)` with zero state.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum FfStatus ff_flow_new(double a,
                          double b,
                          size_t n,
                          double q,
                          double theta,
                          double tau,
                          struct FfFlow **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `h` must be null or a handle from [`ff_flow_new`] not yet freed.
void ff_flow_free(struct FfFlow *h);

// Sets the Newton tolerance and iteration cap.
//
// # Safety
// `h` must be a live handle.
enum FfStatus ff_flow_set_newton(struct FfFlow *h, double tol, size_t max_iters);

// Replaces the state by `len` nodal values and resets time to zero.
//
// # Safety
// `h` must be a live handle and `values` must point to `len` doubles.
enum FfStatus ff_flow_set_state(struct FfFlow *h, const double *values, size_t len);

// Copies the state into `out`, which holds `len` doubles.
//
// # Safety
// `h` must be a live handle and `out` must point to `len` writable doubles.
enum FfStatus ff_flow_get_state(struct FfFlow *h, double *out, size_t len);

// Advances `steps` implicit steps. On failure the state is left at the last
// successful step.
//
// # Safety
// `h` must be a live handle.
enum FfStatus ff_flow_step(struct FfFlow *h, size_t steps);

// Time and norms of the current state.
//
// # Safety
// `h` must be a live handle and `out` a valid pointer.
enum FfStatus ff_flow_energies(struct FfFlow *h, struct FfEnergies *out);

// Runs the experiment described by a config document and writes its output
// into `out_dir` (or the config's `out` when `out_dir` is null). The CLI
// exit status of the run is stored in `exit_status`.
//
// # Safety
// `config` must be a NUL-terminated string, `out_dir` null or
// NUL-terminated, and `exit_status` null or valid.
enum FfStatus ff_run_config(const char *config, const char *out_dir, int32_t *exit_status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAQFLOW_H */
