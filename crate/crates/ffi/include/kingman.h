#ifndef KINGMAN_H
#define KINGMAN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KmStatus {
  KM_STATUS_OK = 0,
  KM_STATUS_INVALID_ARGUMENT = 1,
  KM_STATUS_UNSUPPORTED_REGIME = 2,
  KM_STATUS_RESOURCE_LIMIT = 3,
  KM_STATUS_IO = 4,
  KM_STATUS_NULL_POINTER = 5,
  KM_STATUS_PANIC = 6,
} KmStatus;

/**
 * Result of a normal-limit experiment.
 */
typedef struct KmCltSummary KmCltSummary;

/**
 * A sampled coalescent tree: merge history and inter-coalescence times.
 */
typedef struct KmTree KmTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *km_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *km_version(void);

/**
 * Samples a tree with `n` leaves from stream `replicate` of `seed`.
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum KmStatus km_tree_sample(size_t n, uint64_t seed, uint64_t replicate, struct KmTree **out);

/**
 * Releases a tree. Null is ignored.
 *
 * # Safety
 * `tree` must come from [`km_tree_sample`] and not be used afterwards.
 */
void km_tree_free(struct KmTree *tree);

/**
 * Number of leaves, or 0 for a null handle.
 *
 * # Safety
 * `tree` must be null or a live handle.
 */
size_t km_tree_leaves(const struct KmTree *tree);

/**
 * Writes the raw and smoothed order lengths for `r = 1..=s` into two
 * arrays of length `s`. Either output may be null.
 *
 * # Safety
 * `tree` must be a live handle; non-null outputs must hold `s` doubles.
 */
enum KmStatus km_tree_order_lengths(const struct KmTree *tree,
                                    size_t s,
                                    double *raw,
                                    double *smoothed);

/**
 * Writes `W_k(1), ..., W_k(s)` into `out`.
 *
 * # Safety
 * `tree` must be a live handle and `out` must hold `s` values.
 */
enum KmStatus km_tree_order_counts(const struct KmTree *tree, size_t k, size_t s, uint32_t *out);

/**
 * `E W_k(r)` for a tree with `n` leaves.
 *
 * # Safety
 * `out` must be valid for writing one double.
 */
enum KmStatus km_mean_w(size_t n, size_t k, size_t r, double *out);

/**
 * `Var W_k(r)`; `KM_STATUS_UNSUPPORTED_REGIME` when `n <= 2r`.
 *
 * # Safety
 * `out` must be valid for writing one double.
 */
enum KmStatus km_variance_w(size_t n, size_t k, size_t r, double *out);

/**
 * `E L^{n,r}`.
 *
 * # Safety
 * `out` must be valid for writing one double.
 */
enum KmStatus km_mean_length(size_t n, size_t r, double *out);

/**
 * Total variation distance between the joint one-step law at `(k, v)` and
 * the product of external one-step laws at `(k, v_tilde)`, both of length `s`.
 *
 * # Safety
 * `v` and `v_tilde` must hold `s` values; `out` must be writable.
 */
enum KmStatus km_coupling_tv(size_t k,
                             size_t s,
                             const uint32_t *v,
                             const uint32_t *v_tilde,
                             double *out);

/**
 * Runs the normal-limit experiment on trees. `workers = 0` uses every core.
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum KmStatus km_clt_run(size_t n,
                         size_t s,
                         uint64_t replicates,
                         uint64_t seed,
                         size_t workers,
                         struct KmCltSummary **out);

/**
 * The summary as JSON, owned by the handle.
 *
 * # Safety
 * `summary` must be null or a live handle.
 */
const char *km_clt_summary_json(const struct KmCltSummary *summary);

/**
 * Rescaled sample mean of order `r` (1-based); NaN when out of range.
 *
 * # Safety
 * `summary` must be null or a live handle.
 */
double km_clt_summary_mean(const struct KmCltSummary *summary, size_t r);

/**
 * Kolmogorov–Smirnov distance of order `r` to the standard normal; NaN
 * when out of range.
 *
 * # Safety
 * `summary` must be null or a live handle.
 */
double km_clt_summary_ks(const struct KmCltSummary *summary, size_t r);

/**
 * Releases a summary. Null is ignored.
 *
 * # Safety
 * `summary` must come from [`km_clt_run`] and not be used afterwards.
 */
void km_clt_summary_free(struct KmCltSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KINGMAN_H */
