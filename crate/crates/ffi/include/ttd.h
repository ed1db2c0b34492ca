#ifndef TTD_H
#define TTD_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Zero is success.
 */
typedef enum TtdStatus {
  TTD_STATUS_OK = 0,
  TTD_STATUS_NULL_ARGUMENT = 1,
  TTD_STATUS_INVALID_UTF8 = 2,
  TTD_STATUS_IO = 3,
  TTD_STATUS_TRACE_CORRUPT = 4,
  TTD_STATUS_PROGRAM_ERROR = 5,
  TTD_STATUS_SCENARIO_ERROR = 6,
  TTD_STATUS_DIVERGENCE = 7,
  TTD_STATUS_NO_PREDECESSOR = 8,
  TTD_STATUS_NO_CALLER = 9,
  TTD_STATUS_END_OF_TRACE = 10,
  TTD_STATUS_TARGET_NEVER_FIRES = 11,
  TTD_STATUS_UNKNOWN_LOCATION = 12,
  TTD_STATUS_OUT_OF_RANGE = 13,
  TTD_STATUS_INVALID_HEAP_PATH = 14,
  TTD_STATUS_REPLAY_FAILED = 15,
  TTD_STATUS_ENGINE_FAULT = 16,
  TTD_STATUS_PANIC = 17,
  TTD_STATUS_INVALID_ARGUMENT = 18,
} TtdStatus;

/**
 * A debug session over a trace.
 */
typedef struct TtdSession TtdSession;

/**
 * A recorded trace.
 */
typedef struct TtdTrace TtdTrace;

/**
 * (call count, loop iterations) of a frame.
 */
typedef struct TtdTime {
  uint64_t call_count;
  uint64_t back_jumps;
} TtdTime;

/**
 * Where a session is paused.
 */
typedef struct TtdPause {
  uint64_t event;
  uint32_t stmt;
  uint32_t script;
  uint32_t line;
  uint32_t col;
  struct TtdTime time;
  uint64_t depth;
} TtdPause;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Human-readable name of a status code. The string is static.
 */
const char *ttd_status_name(enum TtdStatus status);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on this thread.
 */
const char *ttd_last_error(void);

/**
 * Records `source` (named `script_name`) against a scenario given as JSON.
 * A `checkpoint_interval_ms` of 0 records only the initial checkpoint.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; `out` must be
 * writable.
 */
enum TtdStatus ttd_record(const char *script_name,
                          const char *source,
                          const char *scenario_json,
                          uint64_t checkpoint_interval_ms,
                          struct TtdTrace **out);

/**
 * Records a bundled demo with default options.
 *
 * # Safety
 * `name` must be a valid NUL-terminated string; `out` must be writable.
 */
enum TtdStatus ttd_record_demo(const char *name, struct TtdTrace **out);

/**
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be writable.
 */
enum TtdStatus ttd_trace_read(const char *path, struct TtdTrace **out);

/**
 * # Safety
 * `trace` must come from this library; `path` must be a valid string.
 */
enum TtdStatus ttd_trace_write(const struct TtdTrace *trace, const char *path, bool compress);

/**
 * # Safety
 * `trace` must come from this library and `out` must be writable.
 */
enum TtdStatus ttd_trace_event_count(const struct TtdTrace *trace, uint64_t *out);

/**
 * # Safety
 * `trace` must come from this library and `out` must be writable.
 */
enum TtdStatus ttd_trace_checkpoint_count(const struct TtdTrace *trace, uint64_t *out);

/**
 * Replays the trace with full checks. `Divergence` when it does not match.
 *
 * # Safety
 * `trace` must come from this library.
 */
enum TtdStatus ttd_trace_verify(const struct TtdTrace *trace, bool all_checkpoints);

/**
 * # Safety
 * `trace` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void ttd_trace_free(struct TtdTrace *trace);

/**
 * Opens a session paused at the first statement. The session keeps its own
 * reference to the trace, so the trace handle may be freed afterwards.
 *
 * # Safety
 * `trace` must come from this library; `out` must be writable.
 */
enum TtdStatus ttd_session_open(const struct TtdTrace *trace, struct TtdSession **out);

/**
 * # Safety
 * `session` must come from this library and not be used afterwards.
 */
void ttd_session_free(struct TtdSession *session);

/**
 * Current pause; `EndOfTrace` once execution ran past the last statement.
 *
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_pause(struct TtdSession *session, struct TtdPause *out);

/**
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_step_forward(struct TtdSession *session, struct TtdPause *out);

/**
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_step_over(struct TtdSession *session, struct TtdPause *out);

/**
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_step_out(struct TtdSession *session, struct TtdPause *out);

/**
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_step_back(struct TtdSession *session, struct TtdPause *out);

/**
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_reverse_step_over(struct TtdSession *session, struct TtdPause *out);

/**
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_reverse_step_out(struct TtdSession *session, struct TtdPause *out);

/**
 * Runs to the next breakpoint; `EndOfTrace` when none fires.
 *
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_continue(struct TtdSession *session, struct TtdPause *out);

/**
 * Travels to statement `stmt` at logical time `time` within `event`.
 *
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_travel_to(struct TtdSession *session,
                                     uint64_t event,
                                     uint32_t stmt,
                                     struct TtdTime time,
                                     struct TtdPause *out);

/**
 * Travels to the first statement run at or after `event`.
 *
 * # Safety
 * `session` must come from this library; `out` may be null.
 */
enum TtdStatus ttd_session_travel_to_event(struct TtdSession *session,
                                           uint64_t event,
                                           struct TtdPause *out);

/**
 * Sets a breakpoint on the first statement at `script:line`. `condition`
 * may be null for an unconditional breakpoint.
 *
 * # Safety
 * `session` must come from this library; `script` must be a valid string;
 * `id_out` may be null.
 */
enum TtdStatus ttd_session_set_breakpoint(struct TtdSession *session,
                                          const char *script,
                                          uint32_t line,
                                          const struct TtdTime *condition,
                                          uint32_t *id_out);

/**
 * # Safety
 * `session` must come from this library.
 */
enum TtdStatus ttd_session_clear_breakpoint(struct TtdSession *session, uint32_t id);

/**
 * JSON view of the paused state. `what` is one of `locals`, `stack`,
 * `heap`, `dom`, `timers`, `requests`, `storage`, `animations`; `arg` is
 * the frame index for `locals` and the path for `heap` (null otherwise).
 * Free the returned string with [`ttd_string_free`].
 *
 * # Safety
 * `session` must come from this library; string arguments must be valid;
 * `json_out` must be writable.
 */
enum TtdStatus ttd_session_inspect(struct TtdSession *session,
                                   const char *what,
                                   const char *arg,
                                   char **json_out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void ttd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTD_H */
