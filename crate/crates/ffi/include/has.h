#ifndef HAS_FFI_H
#define HAS_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; 2, 3 and 4 match the `has` binary's exit codes.
 */
typedef enum HasStatus {
  HAS_STATUS_OK = 0,
  HAS_STATUS_NULL_POINTER = 1,
  HAS_STATUS_CONFIG = 2,
  HAS_STATUS_DATA = 3,
  HAS_STATUS_RUNTIME = 4,
  HAS_STATUS_BUFFER_TOO_SMALL = 5,
  HAS_STATUS_PANIC = 6,
} HasStatus;

/**
 * Opaque engine handle.
 */
typedef struct HasEngine HasEngine;

typedef struct HasEngineConfig {
  size_t k;
  double tau;
  size_t h_max;
  size_t n_probe;
  size_t n_buckets;
  double subset_fraction;
  bool fuzzy_for_validation;
  bool fuzzy_for_draft;
  bool early_exit;
  uint64_t ivf_seed;
  uint64_t latency_seed;
} HasEngineConfig;

/**
 * Per-call result summary. Document ids and scores go to caller buffers.
 */
typedef struct HasRetrieval {
  size_t n_docs;
  bool accepted;
  /**
   * Valid only when `accepted`.
   */
  uint64_t matched_query;
  double matched_score;
  double edge_seconds;
  double cloud_seconds;
  double total_seconds;
  size_t evictions;
} HasRetrieval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next `has_*` call on the same thread.
 */
const char *has_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *has_version(void);

/**
 * Writes the default configuration to `out`.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum HasStatus has_engine_config_default(struct HasEngineConfig *out);

/**
 * Builds an engine over `n_docs` documents.
 *
 * `vectors` holds `n_docs * dim` floats, row-major; rows need not be
 * normalized. `doc_ids` holds `n_docs` distinct ids. On success `*out`
 * receives a handle to release with [`has_engine_free`].
 *
 * # Safety
 * `config` must be valid for reads, `doc_ids` for `n_docs` reads, `vectors`
 * for `n_docs * dim` reads, and `out` for one write.
 */
enum HasStatus has_engine_new(const struct HasEngineConfig *config,
                              size_t dim,
                              const uint64_t *doc_ids,
                              const float *vectors,
                              size_t n_docs,
                              struct HasEngine **out);

/**
 * Retrieves up to `k` documents for one query.
 *
 * `out_ids` and `out_scores` (either may be NULL) receive `result.n_docs`
 * entries and must hold at least `capacity`. Fails with `BufferTooSmall`
 * when `capacity` is below the configured `k`. Safe to call concurrently on
 * one engine.
 *
 * # Safety
 * `engine` must come from [`has_engine_new`] and not be freed; `query` must
 * be valid for `dim` reads; non-NULL output buffers for `capacity` writes;
 * `result` for one write.
 */
enum HasStatus has_engine_retrieve(const struct HasEngine *engine,
                                   uint64_t query_id,
                                   const float *query,
                                   size_t dim,
                                   uint64_t *out_ids,
                                   float *out_scores,
                                   size_t capacity,
                                   struct HasRetrieval *result);

/**
 * Number of cached queries, or 0 for NULL.
 *
 * # Safety
 * `engine` must be NULL or a live handle.
 */
size_t has_engine_cache_len(const struct HasEngine *engine);

/**
 * Cache footprint in bytes, or 0 for NULL.
 *
 * # Safety
 * `engine` must be NULL or a live handle.
 */
size_t has_engine_cache_memory(const struct HasEngine *engine);

/**
 * Empties the query cache.
 *
 * # Safety
 * `engine` must be NULL or a live handle.
 */
enum HasStatus has_engine_reset_cache(const struct HasEngine *engine);

/**
 * Releases an engine. NULL is a no-op.
 *
 * # Safety
 * `engine` must be NULL or a handle from [`has_engine_new`] not yet freed,
 * with no calls in flight.
 */
void has_engine_free(struct HasEngine *engine);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAS_FFI_H */
