#ifndef SMARTCTX_H
#define SMARTCTX_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SmartctxStatus {
  SMARTCTX_STATUS_OK = 0,
  SMARTCTX_STATUS_NULL_POINTER = 1,
  SMARTCTX_STATUS_INVALID_ARGUMENT = 2,
  SMARTCTX_STATUS_IO = 3,
  SMARTCTX_STATUS_PARSE = 4,
  SMARTCTX_STATUS_DATA = 5,
  SMARTCTX_STATUS_PANIC = 6,
} SmartctxStatus;

/**
 * A fitted per-user estimator.
 */
typedef struct SmartctxEstimator SmartctxEstimator;

/**
 * A trained SmartContext policy.
 */
typedef struct SmartctxPolicy SmartctxPolicy;

/**
 * A loaded or generated trace.
 */
typedef struct SmartctxTrace SmartctxTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *smartctx_version(void);

/**
 * Message of the last failed call on this thread, or an empty string. Valid
 * until the next call into the library on the same thread.
 */
const char *smartctx_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void smartctx_string_free(char *s);

/**
 * Reads a JSONL trace.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SmartctxStatus smartctx_trace_read(const char *path, struct SmartctxTrace **out);

/**
 * Generates a synthetic trace with default settings apart from the given ones.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SmartctxStatus smartctx_trace_synth(size_t users,
                                         double scale,
                                         double lambda,
                                         uint64_t seed,
                                         struct SmartctxTrace **out);

/**
 * # Safety
 * `trace` must be a live handle; `path` a NUL-terminated string.
 */
enum SmartctxStatus smartctx_trace_write(const struct SmartctxTrace *trace, const char *path);

/**
 * # Safety
 * `trace` must be a live handle; `out` a valid pointer.
 */
enum SmartctxStatus smartctx_trace_user_count(const struct SmartctxTrace *trace, size_t *out);

/**
 * # Safety
 * `trace` must be a live handle; `out` a valid pointer.
 */
enum SmartctxStatus smartctx_trace_event_count(const struct SmartctxTrace *trace, size_t *out);

/**
 * # Safety
 * `trace` must be null or a handle from this library, freed once.
 */
void smartctx_trace_free(struct SmartctxTrace *trace);

/**
 * Mean LOOCV accuracy over users. `spec_json` may be null for every source
 * with `bins` bins.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum SmartctxStatus smartctx_loocv_accuracy(const struct SmartctxTrace *trace,
                                            const char *kind,
                                            const char *spec_json,
                                            size_t bins,
                                            size_t r,
                                            double *out);

/**
 * Fits an estimator on all of one user's events of `kind`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated; `spec_json` may be null.
 */
enum SmartctxStatus smartctx_estimator_train(const struct SmartctxTrace *trace,
                                             const char *user,
                                             const char *kind,
                                             const char *spec_json,
                                             size_t bins,
                                             struct SmartctxEstimator **out);

/**
 * # Safety
 * `json` must be NUL-terminated; `out` a valid pointer.
 */
enum SmartctxStatus smartctx_estimator_from_json(const char *json, struct SmartctxEstimator **out);

/**
 * # Safety
 * `est` must be a live handle; `out` a valid pointer. Free the string with
 * [`smartctx_string_free`].
 */
enum SmartctxStatus smartctx_estimator_to_json(const struct SmartctxEstimator *est, char **out);

/**
 * # Safety
 * `est` must be a live handle; `out` a valid pointer.
 */
enum SmartctxStatus smartctx_estimator_outcome_count(const struct SmartctxEstimator *est,
                                                     size_t *out);

/**
 * Top-`r` labels for a snapshot, as JSON `{"labels": [...],
 * "probabilities": [...]}`, most probable first.
 *
 * # Safety
 * Pointers must be valid; `snapshot_json` NUL-terminated.
 */
enum SmartctxStatus smartctx_estimator_estimate(const struct SmartctxEstimator *est,
                                                const char *snapshot_json,
                                                size_t r,
                                                char **out);

/**
 * # Safety
 * `est` must be null or a handle from this library, freed once.
 */
void smartctx_estimator_free(struct SmartctxEstimator *est);

/**
 * Trains a SmartContext policy on all of one user's events of `kind` with
 * the default energy costs.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated; `spec_json` may be null.
 */
enum SmartctxStatus smartctx_policy_train(const struct SmartctxTrace *trace,
                                          const char *user,
                                          const char *kind,
                                          const char *spec_json,
                                          size_t bins,
                                          size_t r,
                                          struct SmartctxPolicy **out);

/**
 * Estimates one snapshot, reading costly sources until the posterior mass
 * of the response set reaches `target`. The result is a JSON object with
 * `labels`, `estimated_accuracy`, `sources_used`, `energy_spent` and
 * `target_met`.
 *
 * # Safety
 * Pointers must be valid; `snapshot_json` NUL-terminated.
 */
enum SmartctxStatus smartctx_policy_estimate(const struct SmartctxPolicy *policy,
                                             const char *snapshot_json,
                                             double target,
                                             char **out);

/**
 * # Safety
 * `policy` must be null or a handle from this library, freed once.
 */
void smartctx_policy_free(struct SmartctxPolicy *policy);

/**
 * Short lowercase name of a status code.
 */
const char *smartctx_status_name(enum SmartctxStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMARTCTX_H */
