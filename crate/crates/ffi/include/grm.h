#ifndef GRM_H
#define GRM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GrmStatus {
  GRM_STATUS_OK = 0,
  GRM_STATUS_NULL_POINTER = 1,
  GRM_STATUS_INVALID_ARGUMENT = 2,
  GRM_STATUS_DOMAIN = 3,
  GRM_STATUS_INFEASIBLE_NATURAL_PARAM = 4,
  GRM_STATUS_PRECISION = 5,
  GRM_STATUS_NORMALIZATION = 6,
  GRM_STATUS_LINE_SEARCH = 7,
  GRM_STATUS_PARSE = 8,
  GRM_STATUS_VERSION = 9,
  GRM_STATUS_IO = 10,
  GRM_STATUS_PANIC = 11,
} GrmStatus;

typedef enum GrmFamily {
  GRM_FAMILY_POISSON = 0,
  GRM_FAMILY_EXPONENTIAL = 1,
} GrmFamily;

/**
 * Opaque model handle.
 */
typedef struct GrmModel GrmModel;

/**
 * Fitting options; start from [`grm_fit_options_default`].
 */
typedef struct GrmFitOptions {
  double lambda;
  uint32_t nq;
  uint32_t newton_max;
  bool simplified;
  bool stagewise;
  /**
   * 0 averages the node estimates, 1 keeps the one closest to zero.
   */
  uint32_t symmetrize;
  uint64_t seed;
} GrmFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty when none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *grm_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void grm_string_free(char *s);

struct GrmFitOptions grm_fit_options_default(void);

/**
 * Creates an all-zero model.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum GrmStatus grm_model_new(enum GrmFamily family,
                             size_t p,
                             size_t k,
                             bool simplified,
                             struct GrmModel **out);

/**
 * # Safety
 * `m` must be null or a handle from this library that has not been freed.
 */
void grm_model_free(struct GrmModel *m);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GrmStatus grm_model_load(const char *path, struct GrmModel **out);

/**
 * # Safety
 * `m` must be a live handle and `path` a NUL-terminated string.
 */
enum GrmStatus grm_model_save(const struct GrmModel *m, const char *path);

/**
 * Writes the number of variables and the model order.
 *
 * # Safety
 * `m` must be a live handle; `p` and `k` may be null.
 */
enum GrmStatus grm_model_shape(const struct GrmModel *m, size_t *p, size_t *k);

/**
 * Reads entry `idx` (0-based, any order) of block `(l, j)`.
 *
 * # Safety
 * `m` must be a live handle, `idx` must point to `len` values and `value` must be valid.
 */
enum GrmStatus grm_model_get(const struct GrmModel *m,
                             size_t l,
                             size_t j,
                             const size_t *idx,
                             size_t len,
                             double *value);

/**
 * Sets entry `idx` of block `(l, j)`.
 *
 * # Safety
 * `m` must be a live handle and `idx` must point to `len` values.
 */
enum GrmStatus grm_model_set(struct GrmModel *m,
                             size_t l,
                             size_t j,
                             const size_t *idx,
                             size_t len,
                             double value);

/**
 * Fits a model of order `k` to the row-major `n x p` matrix `data`.
 *
 * # Safety
 * `data` must point to `n * p` values, `opts` may be null for defaults and
 * `out` must be a valid pointer.
 */
enum GrmStatus grm_fit(const double *data,
                       size_t n,
                       size_t p,
                       enum GrmFamily family,
                       size_t k,
                       const struct GrmFitOptions *opts,
                       struct GrmModel **out);

/**
 * Draws `n` Gibbs samples into the row-major `n x p` buffer `out`.
 *
 * # Safety
 * `m` must be a live handle and `out` must have room for `n * p` values.
 */
enum GrmStatus grm_model_sample(const struct GrmModel *m,
                                size_t n,
                                size_t burnin,
                                size_t thin,
                                uint64_t seed,
                                double *out);

/**
 * Renders the top-`top` report; free the result with [`grm_string_free`].
 *
 * # Safety
 * `m` must be a live handle and `out` a valid pointer.
 */
enum GrmStatus grm_model_report(const struct GrmModel *m, size_t top, char **out);

/**
 * Sets `*ok` to 1 when the normalizability check passes. For the exponential
 * family `u` (room for `p` values, may be null) receives the failing direction.
 *
 * # Safety
 * `m` must be a live handle, `ok` valid and `u` null or of length `p`.
 */
enum GrmStatus grm_model_check(const struct GrmModel *m,
                               size_t n_dirs,
                               uint64_t seed,
                               int32_t *ok,
                               double *u);

/**
 * Bounds on the log partition of a node conditional with natural parameters
 * `eta[0..k]` on the statistics `x, x^(1/2), ..., x^(1/k)`, using `nq` pieces.
 *
 * # Safety
 * `eta` must point to `k` values; `lower` and `upper` must be valid.
 */
enum GrmStatus grm_log_partition(enum GrmFamily family,
                                 const double *eta,
                                 size_t k,
                                 size_t nq,
                                 double *lower,
                                 double *upper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRM_H */
