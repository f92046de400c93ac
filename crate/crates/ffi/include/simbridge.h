#ifndef SIMBRIDGE_H
#define SIMBRIDGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_UTF8 = 2,
  SB_STATUS_INVALID_SCENARIO = 3,
  SB_STATUS_REJECTED = 4,
  SB_STATUS_RUNTIME = 5,
  SB_STATUS_PANIC = 6,
} SbStatus;

/**
 * Opaque simulation handle.
 */
typedef struct SbBridge SbBridge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * Message for the last failed call on this thread; empty after success.
 * Valid until the next call on this thread.
 */
const char *sb_last_error_message(void);

/**
 * Builds a bridge from scenario JSON (strict parsing).
 *
 * # Safety
 * `scenario_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SbStatus sb_bridge_new(const char *scenario_json, struct SbBridge **out);

/**
 * Releases a bridge. Null is ignored.
 *
 * # Safety
 * `b` must come from `sb_bridge_new` and not be used afterwards.
 */
void sb_bridge_free(struct SbBridge *b);

/**
 * Advances `substeps` physics steps, running controller ticks as due.
 *
 * # Safety
 * `b` must be a live bridge.
 */
enum SbStatus sb_bridge_step(struct SbBridge *b, uint64_t substeps);

/**
 * Queues a command given as JSON, e.g. `{"op":"pause"}`. It takes effect
 * at the next step.
 *
 * # Safety
 * `b` must be a live bridge and `cmd_json` a NUL-terminated string.
 */
enum SbStatus sb_bridge_enqueue_json(struct SbBridge *b, const char *cmd_json);

/**
 * Current snapshot as JSON. Free the result with `sb_string_free`.
 *
 * # Safety
 * `b` must be a live bridge and `out` a valid pointer.
 */
enum SbStatus sb_bridge_snapshot_json(struct SbBridge *b, char **out);

/**
 * Run report so far as JSON. Free the result with `sb_string_free`.
 *
 * # Safety
 * `b` must be a live bridge and `out` a valid pointer.
 */
enum SbStatus sb_bridge_report_json(struct SbBridge *b, char **out);

/**
 * Sim time in seconds.
 *
 * # Safety
 * `b` must be a live bridge and `out` a valid pointer.
 */
enum SbStatus sb_bridge_time(struct SbBridge *b, double *out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sb_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMBRIDGE_H */
