#ifndef HEARSAY_H
#define HEARSAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HearsayStatus {
  HEARSAY_STATUS_OK = 0,
  /**
   * At least one check failed.
   */
  HEARSAY_STATUS_CHECK_FAILED = 1,
  /**
   * The scenario or configuration was rejected.
   */
  HEARSAY_STATUS_INVALID_CONFIG = 2,
  /**
   * No check failed, but some could not be decided, or the run hit its
   * step limit before quiescence.
   */
  HEARSAY_STATUS_CHECK_UNKNOWN = 3,
  HEARSAY_STATUS_NULL_POINTER = 4,
  HEARSAY_STATUS_INVALID_UTF8 = 5,
  /**
   * Malformed JSON or trace input.
   */
  HEARSAY_STATUS_PARSE = 6,
  /**
   * The simulation has not been run yet.
   */
  HEARSAY_STATUS_NOT_RUN = 7,
  /**
   * An index was out of range.
   */
  HEARSAY_STATUS_OUT_OF_RANGE = 8,
  HEARSAY_STATUS_PANIC = 9,
} HearsayStatus;

/**
 * Opaque simulation handle.
 */
typedef struct HearsaySim HearsaySim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a simulation from a scenario JSON document. `seed` overrides the
 * scenario's first seed when `use_seed` is true.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HearsayStatus hearsay_sim_new_from_json(const char *json,
                                             bool use_seed,
                                             uint64_t seed,
                                             struct HearsaySim **out);

/**
 * Runs the simulation to quiescence or the step limit. Returns
 * `CHECK_UNKNOWN` when the limit was hit.
 *
 * # Safety
 * `sim` must come from [`hearsay_sim_new_from_json`] and not be freed.
 */
enum HearsayStatus hearsay_sim_run(struct HearsaySim *sim);

/**
 * The trace of the last run as JSON lines.
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum HearsayStatus hearsay_sim_trace_jsonl(const struct HearsaySim *sim, char **out);

/**
 * Checks the last run. `out_report` receives the report as JSON.
 *
 * # Safety
 * `sim` must be a live handle and `out_report` a valid pointer.
 */
enum HearsayStatus hearsay_sim_check(const struct HearsaySim *sim, char **out_report);

/**
 * Balance of `agent` as seen by `viewer` after the last run.
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum HearsayStatus hearsay_sim_balance(const struct HearsaySim *sim,
                                       uint32_t viewer,
                                       uint32_t agent,
                                       uint64_t *out);

/**
 * Checks a JSON-lines trace offline.
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string and `out_report` a valid pointer.
 */
enum HearsayStatus hearsay_check_trace(const char *jsonl, char **out_report);

/**
 * Hex SHA-256 digest of a transaction's canonical encoding.
 *
 * # Safety
 * `tx_json` must be a NUL-terminated string and `out_hex` a valid pointer.
 */
enum HearsayStatus hearsay_tx_digest(const char *tx_json, char **out_hex);

/**
 * Message for the last error on this thread, or null. Valid until the next
 * call into this library from the same thread.
 */
const char *hearsay_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void hearsay_string_free(char *s);

/**
 * # Safety
 * `sim` must be null or a live handle, freed once.
 */
void hearsay_sim_free(struct HearsaySim *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEARSAY_H */
