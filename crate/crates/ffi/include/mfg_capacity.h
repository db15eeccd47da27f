#ifndef MFG_CAPACITY_H
#define MFG_CAPACITY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfgStatus {
  MFG_STATUS_OK = 0,
  MFG_STATUS_NULL_POINTER = 1,
  MFG_STATUS_INVALID_PARAMS = 2,
  MFG_STATUS_HORIZON_CONDITION = 3,
  MFG_STATUS_CONVERGENCE = 4,
  MFG_STATUS_SHOOTING = 5,
  MFG_STATUS_BUFFER_TOO_SMALL = 6,
  MFG_STATUS_PANIC = 7,
} MfgStatus;

// Series stored in a solution.
typedef enum MfgSeries {
  MFG_SERIES_TIME = 0,
  MFG_SERIES_Z = 1,
  MFG_SERIES_Q_HAT = 2,
  MFG_SERIES_U_HAT = 3,
} MfgSeries;

// Opaque equilibrium handle.
typedef struct MfgSolution MfgSolution;

// Solver settings; fill with `mfg_solver_options_default()`.
typedef struct MfgSolverOptions {
  double tol_fixed_point;
  uint32_t max_iterations;
  double damping;
  double tol_shoot_zeta;
  double infinite_step;
  double extension;
} MfgSolverOptions;

// Model parameters.
typedef struct MfgParams {
  double rho;
  double delta;
  double beta;
  double sigma;
} MfgParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Default solver settings.
struct MfgSolverOptions mfg_solver_options_default(void);

// Writes the long-run capacity `y_inf` to `out`.
//
// # Safety
// `params` must be null or valid; `out` must be null or writable.
enum MfgStatus mfg_steady_state(const struct MfgParams *params, double *out);

// Finite-horizon equilibrium on `n_steps` uniform steps over `[0, t_end]`
// for initial mean `x0`. `options` may be null.
//
// # Safety
// Pointers must be null or valid; on success `*out` owns a new handle.
enum MfgStatus mfg_solve_finite(const struct MfgParams *params,
                                double x0,
                                double t_end,
                                size_t n_steps,
                                const struct MfgSolverOptions *options,
                                struct MfgSolution **out);

// Infinite-horizon equilibrium reported on `[0, s_max]`. `options` may be null.
//
// # Safety
// Pointers must be null or valid; on success `*out` owns a new handle.
enum MfgStatus mfg_solve_infinite(const struct MfgParams *params,
                                  double x0,
                                  double s_max,
                                  const struct MfgSolverOptions *options,
                                  struct MfgSolution **out);

// Number of grid points, or 0 for a null handle.
//
// # Safety
// `sol` must be null or a live handle.
size_t mfg_solution_len(const struct MfgSolution *sol);

// Copies one series into `buf`, which must hold `mfg_solution_len` values.
//
// # Safety
// `sol` must be null or live; `buf` must be null or valid for `cap` writes.
enum MfgStatus mfg_solution_copy(const struct MfgSolution *sol,
                                 enum MfgSeries series,
                                 double *buf,
                                 size_t cap);

// Value of an agent starting at the population mean.
//
// # Safety
// `sol` must be null or live; `out` must be null or writable.
enum MfgStatus mfg_solution_value(const struct MfgSolution *sol, double *out);

// Sup-norm residual of the equilibrium equation.
//
// # Safety
// `sol` must be null or live; `out` must be null or writable.
enum MfgStatus mfg_solution_residual(const struct MfgSolution *sol, double *out);

// Releases a handle. Null is ignored.
//
// # Safety
// `sol` must be null or a handle not yet freed.
void mfg_solution_free(struct MfgSolution *sol);

// Monte Carlo mean and standard deviation of capacity under the stored
// control, with volatility `sigma` and every agent starting at `x0`.
// Either output may be null.
//
// # Safety
// `sol` must be null or live; non-null buffers must be valid for `cap` writes.
enum MfgStatus mfg_simulate_mean(const struct MfgSolution *sol,
                                 double sigma,
                                 size_t n_paths,
                                 uint64_t seed,
                                 double *mean_out,
                                 double *std_out,
                                 size_t cap);

// Copies the last error of this thread, NUL-terminated and truncated to
// fit, and returns the full length including the terminator. A null `buf`
// only queries the length.
//
// # Safety
// `buf` must be null or valid for `cap` writes.
size_t mfg_last_error_message(char *buf, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFG_CAPACITY_H */
