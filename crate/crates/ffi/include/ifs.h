/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef IFS_H
#define IFS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IfsStatus {
  IFS_STATUS_OK = 0,
  IFS_STATUS_INVALID_ARGUMENT = 1,
  IFS_STATUS_VALIDATION = 2,
  IFS_STATUS_INFEASIBLE = 3,
  IFS_STATUS_INTERNAL = 4,
  IFS_STATUS_PANIC = 5,
} IfsStatus;

/**
 * Undirected interference graph.
 */
typedef struct IfsGraph IfsGraph;

/**
 * Validated panel of treatments, outcomes and covariates.
 */
typedef struct IfsPanel IfsPanel;

/**
 * Outcome of a permutation test.
 */
typedef struct IfsResult IfsResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a panel from row-major arrays: `treatments` and `outcomes` are
 * `n * k`, `covariates` is `n * d`, `pi` has `k` entries or is null (then
 * the observed treated fractions are used). Units are named `0..n-1`.
 *
 * # Safety
 * Non-null pointers must reference arrays of the stated lengths; `out`
 * must be writable.
 */
enum IfsStatus ifs_panel_new(size_t n,
                             size_t k,
                             size_t d,
                             const uint8_t *treatments,
                             const double *outcomes,
                             const double *covariates,
                             const double *pi,
                             struct IfsPanel **out);

/**
 * # Safety
 * `panel` must come from `ifs_panel_new` and not be freed twice.
 */
void ifs_panel_free(struct IfsPanel *panel);

/**
 * Builds an undirected graph on `n` vertices from `m` edges `src[i]-dst[i]`;
 * `weights` may be null.
 *
 * # Safety
 * Non-null pointers must reference arrays of length `m`; `out` must be
 * writable.
 */
enum IfsStatus ifs_graph_new(size_t n,
                             size_t m,
                             const size_t *src,
                             const size_t *dst,
                             const double *weights,
                             struct IfsGraph **out);

/**
 * # Safety
 * `graph` must come from `ifs_graph_new` and not be freed twice.
 */
void ifs_graph_free(struct IfsGraph *graph);

/**
 * Runs the test described by `config_json` (the same fields as the TOML
 * test configuration). `graph` may be null for tests that need none.
 *
 * # Safety
 * `panel` and a non-null `graph` must be live handles; `config_json` must
 * be a NUL-terminated string; `out` must be writable.
 */
enum IfsStatus ifs_run_test(const struct IfsPanel *panel,
                            const struct IfsGraph *graph,
                            const char *config_json,
                            struct IfsResult **out);

/**
 * P-value of a result, or NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double ifs_result_p_value(const struct IfsResult *result);

/**
 * Observed statistic of a result, or NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double ifs_result_t_observed(const struct IfsResult *result);

/**
 * Number of replicate statistics held by a result.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ifs_result_replicate_count(const struct IfsResult *result);

/**
 * Copies up to `len` replicate statistics into `buf`.
 *
 * # Safety
 * `buf` must be writable for `len` doubles.
 */
enum IfsStatus ifs_result_replicates(const struct IfsResult *result, double *buf, size_t len);

/**
 * Serializes a result as JSON; free the string with `ifs_string_free`.
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum IfsStatus ifs_result_to_json(const struct IfsResult *result, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void ifs_string_free(char *s);

/**
 * # Safety
 * `result` must come from `ifs_run_test` and not be freed twice.
 */
void ifs_result_free(struct IfsResult *result);

/**
 * `min(1, 2 * mean(ps))` over `len` p-values.
 *
 * # Safety
 * `ps` must reference `len` doubles and `out` must be writable.
 */
enum IfsStatus ifs_aggregate_pvalues(const double *ps, size_t len, double *out);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library on this thread.
 */
const char *ifs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ifs_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IFS_H */
