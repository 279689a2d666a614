/* C interface to the okgrad estimators. */

#ifndef OKGRAD_H
#define OKGRAD_H

/* Generated by cbindgen from okgrad-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum OkgradStatus {
  OkgradStatus_Ok = 0,
  OkgradStatus_NullPointer = 1,
  OkgradStatus_InvalidArgument = 2,
  OkgradStatus_NumericFailure = 3,
  OkgradStatus_IoFailure = 4,
  OkgradStatus_Panic = 5,
} OkgradStatus;

/**
 * Opaque recurrent highway cell (parameters plus output head).
 */
typedef struct OkgradRhn OkgradRhn;

/**
 * Deterministic counter-based random stream.
 */
typedef struct OkgradRng OkgradRng;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *okgrad_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *okgrad_version(void);

/**
 * Create a random stream keyed by `(seed, stream)`.
 */
struct OkgradRng *okgrad_rng_new(uint64_t seed, uint64_t stream);

/**
 * Release a stream created by [`okgrad_rng_new`].
 *
 * # Safety
 * `rng` must be a pointer previously returned by `okgrad_rng_new` and not
 * yet freed; passing NULL is allowed and does nothing.
 */
void okgrad_rng_free(struct OkgradRng *rng);

/**
 * Sample the minimum-variance unbiased rank-`rank` approximation of the
 * `rows x cols` row-major matrix `c`: on success `l_out` (`rows x rank`)
 * and `r_out` (`cols x rank`) hold factors whose product `L R^T` has rank
 * at most `rank` and expectation `c` over the stream's sign draws.
 *
 * # Safety
 * `c` must point to `rows * cols` readable doubles; `l_out` and `r_out`
 * must point to `rows * rank` and `cols * rank` writable doubles; `rng`
 * must be a live stream from [`okgrad_rng_new`].
 */
enum OkgradStatus okgrad_opt(const double *c,
                             size_t rows,
                             size_t cols,
                             size_t rank,
                             struct OkgradRng *rng,
                             double *l_out,
                             double *r_out);

/**
 * Deterministic best rank-`rank` approximation (singular value
 * truncation), same buffer contract as [`okgrad_opt`].
 *
 * # Safety
 * See [`okgrad_opt`]; no stream is needed.
 */
enum OkgradStatus okgrad_opt_bias(const double *c,
                                  size_t rows,
                                  size_t cols,
                                  size_t rank,
                                  double *l_out,
                                  double *r_out);

/**
 * Split a non-increasing, non-negative diagonal of length `n` for
 * rank-`rank` approximation, reporting the split index `m` (1-based), the
 * number of mixed columns `k`, the suffix sums `s1` and `s2`, and the
 * variance `s1^2 / k - s2` achieved by the optimal sampler.
 *
 * # Safety
 * `d` must point to `n` readable doubles; output pointers must each be
 * valid for one write.
 */
enum OkgradStatus okgrad_split_index(const double *d,
                                     size_t n,
                                     size_t rank,
                                     size_t *m_out,
                                     size_t *k_out,
                                     double *s1_out,
                                     double *s2_out,
                                     double *variance_bound_out);

/**
 * Sample the optimal unbiased rank-`rank` approximation of `diag(d)`. The
 * sampled factor (shared by both sides) is written to `l_out`
 * (`n x rank`, row-major).
 *
 * # Safety
 * `d` must point to `n` readable doubles, `l_out` to `n * rank` writable
 * doubles, and `rng` must be a live stream.
 */
enum OkgradStatus okgrad_opt_diag(const double *d,
                                  size_t n,
                                  size_t rank,
                                  struct OkgradRng *rng,
                                  double *l_out);

/**
 * Build `z_rows` orthonormal vectors whose summed outer product has the
 * prescribed diagonal `d` (entries in [0, 1] summing to `z_rows`). The
 * vectors are written row-major to `z_out` (`z_rows x n`).
 *
 * # Safety
 * `d` must point to `n` readable doubles and `z_out` to `z_rows * n`
 * writable doubles.
 */
enum OkgradStatus okgrad_idempotent_diagonal(const double *d,
                                             size_t n,
                                             size_t z_rows,
                                             double *z_out);

/**
 * Singular value decomposition of a `rows x cols` row-major matrix:
 * writes `u` (`rows x rows`), the `min(rows, cols)` singular values in
 * non-increasing order, and `v` (`cols x cols`), with
 * `a = u diag(d) v^T`.
 *
 * # Safety
 * Buffers must be readable/writable at the sizes above.
 */
enum OkgradStatus okgrad_svd(const double *a,
                             size_t rows,
                             size_t cols,
                             double *u_out,
                             double *d_out,
                             double *v_out);

/**
 * Create a freshly initialized cell with one-hot inputs of width `vocab`.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum OkgradStatus okgrad_rhn_new(size_t units, size_t vocab, uint64_t seed, struct OkgradRhn **out);

/**
 * Load a cell from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` valid for one write.
 */
enum OkgradStatus okgrad_rhn_load(const char *path, struct OkgradRhn **out);

/**
 * Save a cell to a checkpoint file.
 *
 * # Safety
 * `rhn` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
enum OkgradStatus okgrad_rhn_save(const struct OkgradRhn *rhn, uint64_t seed, const char *path);

/**
 * Hidden width of the cell.
 *
 * # Safety
 * `rhn` must be a live handle (NULL returns 0).
 */
size_t okgrad_rhn_units(const struct OkgradRhn *rhn);

/**
 * Output vocabulary size.
 *
 * # Safety
 * `rhn` must be a live handle (NULL returns 0).
 */
size_t okgrad_rhn_vocab(const struct OkgradRhn *rhn);

/**
 * Advance the cell one step: consumes `h_prev` (length `units`) and the
 * one-hot input id, writes the next hidden state to `h_next_out`.
 *
 * # Safety
 * `rhn` must be a live handle; `h_prev` and `h_next_out` must point to
 * `units` readable/writable doubles.
 */
enum OkgradStatus okgrad_rhn_forward(const struct OkgradRhn *rhn,
                                     const double *h_prev,
                                     size_t input_id,
                                     double *h_next_out);

/**
 * Release a cell handle.
 *
 * # Safety
 * `rhn` must come from `okgrad_rhn_new`/`okgrad_rhn_load` and not yet be
 * freed; NULL is allowed.
 */
void okgrad_rhn_free(struct OkgradRhn *rhn);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OKGRAD_H */
