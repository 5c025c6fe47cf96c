#ifndef QRF_H
#define QRF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum QrfStatus {
  QRF_STATUS_OK = 0,
  QRF_STATUS_NULL_ARGUMENT = 1,
  QRF_STATUS_INVALID_UTF8 = 2,
  QRF_STATUS_INVALID_ARGUMENT = 3,
  QRF_STATUS_IO = 4,
  QRF_STATUS_PARSE = 5,
  QRF_STATUS_INTERNAL = 6,
} QrfStatus;

/**
 * Opaque BM25 index handle.
 */
typedef struct QrfIndex QrfIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *qrf_last_error(void);

/**
 * Library version, statically allocated.
 */
const char *qrf_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void qrf_string_free(char *s);

/**
 * Builds an index from a JSON array of `{passage_id, text, source_doc}`.
 *
 * # Safety
 * `passages_json` must be a valid C string and `out` a valid pointer.
 */
enum QrfStatus qrf_index_build(const char *passages_json,
                               double k1,
                               double b,
                               struct QrfIndex **out);

/**
 * Builds an index from a passages JSONL file with a named profile
 * (`qrecc-bm25` or `topiocqa-bm25`).
 *
 * # Safety
 * String arguments must be valid C strings and `out` a valid pointer.
 */
enum QrfStatus qrf_index_build_from_file(const char *passages_path,
                                         const char *profile,
                                         struct QrfIndex **out);

/**
 * Loads an index written by [`qrf_index_save`] or `qrf index`.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum QrfStatus qrf_index_load(const char *path, struct QrfIndex **out);

/**
 * # Safety
 * `index` must be a live handle and `path` a valid C string.
 */
enum QrfStatus qrf_index_save(const struct QrfIndex *index, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `index` must come from this library and not have been freed.
 */
void qrf_index_free(struct QrfIndex *index);

/**
 * Number of passages, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t qrf_index_doc_count(const struct QrfIndex *index);

/**
 * Top-`k` results as a JSON object `{"entries": [{passage_id, score}, ...]}`.
 *
 * # Safety
 * `index` must be a live handle, `query` a valid C string and `out_json`
 * a valid pointer.
 */
enum QrfStatus qrf_index_retrieve(const struct QrfIndex *index,
                                  const char *query,
                                  size_t k,
                                  char **out_json);

/**
 * Rank of the first gold passage (a JSON array of ids) in the top `k`
 * for `query`; 0 when it is not retrieved.
 *
 * # Safety
 * `index` must be a live handle, strings valid C strings and `out_rank`
 * a valid pointer.
 */
enum QrfStatus qrf_gold_rank(const struct QrfIndex *index,
                             const char *query,
                             size_t k,
                             const char *gold_ids_json,
                             uint32_t *out_rank);

/**
 * Evaluates a TREC run against qrels and a JSON map of query id to turn
 * type (`"First"`, `"TopicConcentrated"`, `"TopicShifted"`). Writes the
 * report (metrics in [0, 1]) as JSON.
 *
 * # Safety
 * Paths must be valid C strings and `out_json` a valid pointer.
 */
enum QrfStatus qrf_evaluate(const char *run_path,
                            const char *qrels_path,
                            const char *classes_path,
                            char **out_json);

/**
 * Builds optimal-query sets and preference pairs from feedback records
 * given as JSONL text, sorted by turn. `config_json` may be null for the
 * defaults; otherwise it is a full `RfConfig` object. Writes
 * `{"optimal_sets": [...], "pairs": [...]}`.
 *
 * # Safety
 * `feedback_jsonl` must be a valid C string, `config_json` null or a valid
 * C string, and `out_json` a valid pointer.
 */
enum QrfStatus qrf_build_rf(const char *feedback_jsonl, const char *config_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QRF_H */
