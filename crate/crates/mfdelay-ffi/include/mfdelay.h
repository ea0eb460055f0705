#ifndef MFDELAY_H
#define MFDELAY_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible function.
 */
typedef enum MfdStatus {
  MFD_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MFD_STATUS_NULL_POINTER = 1,
  /**
   * A string argument is not valid UTF-8.
   */
  MFD_STATUS_INVALID_UTF8 = 2,
  /**
   * The problem document is malformed or violates the weight requirements.
   */
  MFD_STATUS_INVALID_PROBLEM = 3,
  /**
   * A stage coefficient matrix is singular; no unique optimal policy exists.
   */
  MFD_STATUS_UNSOLVABLE = 4,
  /**
   * An index argument is out of range.
   */
  MFD_STATUS_OUT_OF_RANGE = 5,
  /**
   * The output buffer is too small; the error message states the required length.
   */
  MFD_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * At least one verification check failed.
   */
  MFD_STATUS_VERIFICATION_FAILED = 7,
  /**
   * Any other failure (including an internal panic).
   */
  MFD_STATUS_INTERNAL = 8,
} MfdStatus;

/**
 * Opaque problem instance.
 */
typedef struct MfdProblem MfdProblem;

/**
 * Opaque solved problem: the instance, its Riccati solution and optimal policy.
 */
typedef struct MfdSolution MfdSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL,
 * or 0 when there is no message.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mfd_last_error(char *buf, size_t len);

/**
 * Parse a JSON problem document and validate it.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum MfdStatus mfd_problem_from_json(const char *json, struct MfdProblem **out);

/**
 * Load a built-in instance (`"sec5"` or `"sec5-long"`).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum MfdStatus mfd_problem_builtin(const char *name, struct MfdProblem **out);

/**
 * State dimension n, largest delay h and horizon Γ of a problem.
 *
 * # Safety
 * `problem` must be a live handle; the output pointers must be valid.
 */
enum MfdStatus mfd_problem_dims(const struct MfdProblem *problem,
                                size_t *n,
                                size_t *h,
                                size_t *gamma);

/**
 * Control dimension m_i of controller `i`.
 *
 * # Safety
 * `problem` must be a live handle; `m` must be valid.
 */
enum MfdStatus mfd_problem_control_dim(const struct MfdProblem *problem, size_t i, size_t *m);

/**
 * Release a problem handle (null is ignored).
 *
 * # Safety
 * `problem` must be null or a handle not yet freed.
 */
void mfd_problem_free(struct MfdProblem *problem);

/**
 * Run the backward pass and synthesize the optimal policy.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be a valid pointer.
 */
enum MfdStatus mfd_solve(const struct MfdProblem *problem, struct MfdSolution **out);

/**
 * Release a solution handle (null is ignored).
 *
 * # Safety
 * `solution` must be null or a handle not yet freed.
 */
void mfd_solution_free(struct MfdSolution *solution);

/**
 * Optimal cost J* from the Riccati solution.
 *
 * # Safety
 * `solution` must be a live handle; `cost` must be valid.
 */
enum MfdStatus mfd_solution_optimal_cost(const struct MfdSolution *solution, double *cost);

/**
 * Expected cost of the policy by exact second-moment propagation.
 *
 * # Safety
 * `solution` must be a live handle; `cost` must be valid.
 */
enum MfdStatus mfd_solution_exact_cost(const struct MfdSolution *solution, double *cost);

/**
 * Gain of controller `i` on the predictor x̂(τ | τ−j) (j = 0 is x(τ)) at
 * time `tau`, written row-major (m_i × n) into `buf`.
 *
 * # Safety
 * `solution` must be a live handle; `buf` must hold `len` doubles.
 */
enum MfdStatus mfd_solution_gain(const struct MfdSolution *solution,
                                 size_t i,
                                 size_t j,
                                 size_t tau,
                                 double *buf,
                                 size_t len);

/**
 * Gain of controller `i` on E x(τ) at time `tau`, row-major (m_i × n).
 *
 * # Safety
 * `solution` must be a live handle; `buf` must hold `len` doubles.
 */
enum MfdStatus mfd_solution_mean_gain(const struct MfdSolution *solution,
                                      size_t i,
                                      size_t tau,
                                      double *buf,
                                      size_t len);

/**
 * All gains as a JSON document (folded display form when `folded` is
 * nonzero). The string must be released with [`mfd_string_free`].
 *
 * # Safety
 * `solution` must be a live handle; `out` must be a valid pointer.
 */
enum MfdStatus mfd_solution_gains_json(const struct MfdSolution *solution,
                                       int32_t folded,
                                       char **out);

/**
 * Release a string returned by this library (null is ignored).
 *
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void mfd_string_free(char *s);

/**
 * Monte Carlo cost over `runs` seeded Gaussian-noise trajectories. The
 * standard error is NaN for a single run.
 *
 * # Safety
 * `solution` must be a live handle; `mean` and `std_error` must be valid.
 */
enum MfdStatus mfd_simulate_cost(const struct MfdSolution *solution,
                                 uint64_t seed,
                                 size_t runs,
                                 double *mean,
                                 double *std_error);

/**
 * Run a verification suite (`equilibrium`, `costate`, `stationarity`,
 * `oracle`, `reductions` or `all`). Returns `Ok` when every check passes and
 * `VerificationFailed` otherwise. If `report_json` is non-null it receives
 * the JSON report, to be released with [`mfd_string_free`].
 *
 * # Safety
 * `solution` must be a live handle; `suite` a NUL-terminated string;
 * `report_json` null or a valid pointer.
 */
enum MfdStatus mfd_verify(const struct MfdSolution *solution,
                          const char *suite,
                          uint64_t seed,
                          size_t runs,
                          char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFDELAY_H */
