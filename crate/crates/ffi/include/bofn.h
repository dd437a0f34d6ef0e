#ifndef BOFN_H
#define BOFN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Acquisition method selector for [`bofn_optimizer_new`].
 */
#define BOFN_METHOD_EI_FN 0

#define BOFN_METHOD_EI 1

#define BOFN_METHOD_RANDOM 2

typedef enum BofnStatus {
  BOFN_STATUS_OK = 0,
  BOFN_STATUS_NULL_POINTER = 1,
  BOFN_STATUS_INVALID_ARGUMENT = 2,
  BOFN_STATUS_UNKNOWN_PROBLEM = 3,
  BOFN_STATUS_DIMENSION_MISMATCH = 4,
  BOFN_STATUS_NO_OBSERVATIONS = 5,
  BOFN_STATUS_MODEL_FAILURE = 6,
  BOFN_STATUS_ACQUISITION_FAILURE = 7,
  BOFN_STATUS_PANIC = 8,
} BofnStatus;

/**
 * Opaque ask/tell optimizer handle.
 */
typedef struct BofnOptimizer BofnOptimizer;

/**
 * Opaque problem handle.
 */
typedef struct BofnProblem BofnProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *bofn_last_error(void);

/**
 * Number of registered problems.
 */
size_t bofn_problem_count(void);

/**
 * Writes the NUL-terminated id of problem `index` into `buf` (capacity
 * `len` bytes).
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum BofnStatus bofn_problem_id(size_t index, char *buf, size_t len);

/**
 * Creates a handle for the registered problem `id`.
 *
 * # Safety
 * `id` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BofnStatus bofn_problem_new(const char *id, struct BofnProblem **out);

/**
 * Releases a problem handle; null is ignored.
 *
 * # Safety
 * `problem` must come from [`bofn_problem_new`] and not be used afterwards.
 */
void bofn_problem_free(struct BofnProblem *problem);

/**
 * Decision dimension, or 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t bofn_problem_dim(const struct BofnProblem *problem);

/**
 * Node count, or 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t bofn_problem_node_count(const struct BofnProblem *problem);

/**
 * Copies box bounds into `lower` and `upper` (each of length `dim`).
 *
 * # Safety
 * `problem` must be a live handle; `lower`/`upper` must hold `dim` values.
 */
enum BofnStatus bofn_problem_bounds(const struct BofnProblem *problem,
                                    double *lower,
                                    double *upper,
                                    size_t dim);

/**
 * Writes the simplex cap into `cap`, or a negative value for box-only
 * problems.
 *
 * # Safety
 * `problem` must be a live handle and `cap` a valid pointer.
 */
enum BofnStatus bofn_problem_simplex_cap(const struct BofnProblem *problem, double *cap);

/**
 * Writes the reference optimum into `value`; `InvalidArgument` when the
 * problem has none.
 *
 * # Safety
 * `problem` must be a live handle and `value` a valid pointer.
 */
enum BofnStatus bofn_problem_reference_optimum(const struct BofnProblem *problem, double *value);

/**
 * Evaluates every node at `x`; node values go to `h` (length
 * `node_count`), the objective is `h[node_count - 1]`.
 *
 * # Safety
 * `problem` must be a live handle; `x` holds `dim` values and `h` room for
 * `node_count` values.
 */
enum BofnStatus bofn_problem_evaluate(const struct BofnProblem *problem,
                                      const double *x,
                                      size_t dim,
                                      double *h,
                                      size_t node_count);

/**
 * Creates an optimizer over a copy of `problem`. `method` is one of the
 * `BOFN_METHOD_*` constants; the first `2(D+1)` asks return a seeded
 * uniform design.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum BofnStatus bofn_optimizer_new(const struct BofnProblem *problem,
                                   uint32_t method,
                                   size_t mc_samples,
                                   size_t restarts,
                                   uint64_t seed,
                                   struct BofnOptimizer **out);

/**
 * Releases an optimizer handle; null is ignored.
 *
 * # Safety
 * `optimizer` must come from [`bofn_optimizer_new`] and not be used
 * afterwards.
 */
void bofn_optimizer_free(struct BofnOptimizer *optimizer);

/**
 * Number of observations told so far, or 0 for a null handle.
 *
 * # Safety
 * `optimizer` must be null or a live handle.
 */
size_t bofn_optimizer_observation_count(const struct BofnOptimizer *optimizer);

/**
 * Writes the next point to evaluate into `x` (length `dim`).
 *
 * # Safety
 * `optimizer` must be a live handle and `x` hold `dim` values.
 */
enum BofnStatus bofn_optimizer_ask(struct BofnOptimizer *optimizer, double *x, size_t dim);

/**
 * Records an observation: decision `x` (length `dim`) and every node value
 * `h` (length `node_count`).
 *
 * # Safety
 * `optimizer` must be a live handle; `x` and `h` must hold `dim` and
 * `node_count` values.
 */
enum BofnStatus bofn_optimizer_tell(struct BofnOptimizer *optimizer,
                                    const double *x,
                                    size_t dim,
                                    const double *h,
                                    size_t node_count);

/**
 * Writes the incumbent point into `x` and its objective into `value`.
 *
 * # Safety
 * `optimizer` must be a live handle; `x` holds `dim` values and `value` is
 * a valid pointer.
 */
enum BofnStatus bofn_optimizer_best(const struct BofnOptimizer *optimizer,
                                    double *x,
                                    size_t dim,
                                    double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOFN_H */
