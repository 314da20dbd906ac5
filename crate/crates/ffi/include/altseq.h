#ifndef ALTSEQ_H
#define ALTSEQ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AltseqMethod {
  ALTSEQ_METHOD_REPLICATION = 0,
  ALTSEQ_METHOD_REGENERATIVE = 1,
  ALTSEQ_METHOD_COVARIANCE_SERIES = 2,
} AltseqMethod;

typedef enum AltseqPolicy {
  ALTSEQ_POLICY_OPTIMAL = 0,
  ALTSEQ_POLICY_LIMIT = 1,
  ALTSEQ_POLICY_FIXED_THRESHOLD = 2,
} AltseqPolicy;

/**
 * Result of every fallible call.
 */
typedef enum AltseqStatus {
  ALTSEQ_STATUS_OK = 0,
  ALTSEQ_STATUS_NULL_POINTER = 1,
  ALTSEQ_STATUS_INVALID_ARGUMENT = 2,
  ALTSEQ_STATUS_NUMERICAL = 3,
  ALTSEQ_STATUS_PANIC = 4,
} AltseqStatus;

/**
 * Value and threshold tables on one grid.
 */
typedef struct AltseqModel AltseqModel;

/**
 * Inputs of `altseq_estimate_sigma2`. `n` is the horizon (replication) or
 * run length (regenerative); `max_lag` and `chain_len` apply to the series
 * method only.
 */
typedef struct AltseqSigma2Params {
  enum AltseqMethod method;
  double xi;
  uint64_t n;
  uint64_t reps;
  uint64_t max_lag;
  uint64_t chain_len;
  uint64_t seed;
} AltseqSigma2Params;

typedef struct AltseqEstimate {
  double estimate;
  double std_error;
  double ci_low;
  double ci_high;
} AltseqEstimate;

/**
 * Builds the tables for grid step `grid_h` and horizon `horizon`; the
 * limit `ξ` is iterated to tolerance `tol_xi`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum AltseqStatus altseq_model_new(double grid_h,
                                   uint32_t horizon,
                                   double tol_xi,
                                   struct AltseqModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `altseq_model_new` and not have been freed.
 */
void altseq_model_free(struct AltseqModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AltseqStatus altseq_model_horizon(const struct AltseqModel *model, uint32_t *out);

/**
 * `v_k(y)` for `0 <= k <= horizon`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AltseqStatus altseq_value(const struct AltseqModel *model, uint32_t k, double y, double *out);

/**
 * `g_k(y)` for `1 <= k <= horizon`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AltseqStatus altseq_threshold(const struct AltseqModel *model,
                                   uint32_t k,
                                   double y,
                                   double *out);

/**
 * `ξ_k` for `1 <= k <= horizon`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AltseqStatus altseq_xi(const struct AltseqModel *model, uint32_t k, double *out);

/**
 * The limit `ξ`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AltseqStatus altseq_xi_limit(const struct AltseqModel *model, double *out);

/**
 * Runs a policy over `n` caller-supplied uniforms. `c` is the level of the
 * fixed-threshold policy and is ignored otherwise; the limit policy uses
 * the model's `ξ`.
 *
 * # Safety
 * `model` must be a live handle, `uniforms` must point to `n` readable
 * doubles, and the two output pointers must be writable.
 */
enum AltseqStatus altseq_run_policy(const struct AltseqModel *model,
                                    enum AltseqPolicy policy,
                                    double c,
                                    const double *uniforms,
                                    size_t n,
                                    uint32_t *selections,
                                    double *final_state);

/**
 * Estimates the variance constant of the limiting policy.
 *
 * # Safety
 * `params` must be readable and `out` writable.
 */
enum AltseqStatus altseq_estimate_sigma2(const struct AltseqSigma2Params *params,
                                         struct AltseqEstimate *out);

/**
 * Copies the calling thread's last error message into `buf` (nul
 * terminated, truncated to `len`) and returns the full message length, or
 * 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t altseq_last_error_message(char *buf, size_t len);

/**
 * Library version as a static nul-terminated string.
 */
const char *altseq_version(void);

#endif  /* ALTSEQ_H */
