#ifndef TTEDGE_H
#define TTEDGE_H

/* Generated by cbindgen from the ttedge-ffi crate. Edit src/lib.rs, not this file. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible API call.
 */
typedef enum TtStatus {
  TT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TT_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  TT_STATUS_UTF8 = 2,
  /**
   * The scenario or map file could not be read or written.
   */
  TT_STATUS_IO = 3,
  /**
   * The scenario JSON or map text failed to parse.
   */
  TT_STATUS_PARSE = 4,
  /**
   * The input parsed but violates a validity rule (bad schedule, bad
   * placement demand, zero workers, ...).
   */
  TT_STATUS_INVALID = 5,
  /**
   * The simulation itself failed after a valid start.
   */
  TT_STATUS_RUN = 6,
  /**
   * A panic was caught at the ABI boundary; state may be incomplete but
   * no memory was leaked to the caller.
   */
  TT_STATUS_PANIC = 7,
} TtStatus;

/**
 * A loaded, validated scenario (config plus occupancy grid). Opaque:
 * create with `tt_scenario_load`/`tt_scenario_load_str`, release with
 * `tt_scenario_free`.
 */
typedef struct TtScenario TtScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load and validate a scenario file; `map_file` inside it resolves
 * relative to the file's own directory. On success `*out_scenario` owns
 * the handle — release it with `tt_scenario_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_scenario` a valid
 * pointer to write one pointer through.
 */
enum TtStatus tt_scenario_load(const char *path, struct TtScenario **out_scenario);

/**
 * Build a scenario from in-memory text: the scenario JSON plus the map
 * text it would otherwise read from `map_file` (which is ignored here).
 *
 * # Safety
 * `config_json` and `map_text` must be NUL-terminated strings and
 * `out_scenario` a valid pointer to write one pointer through.
 */
enum TtStatus tt_scenario_load_str(const char *config_json,
                                   const char *map_text,
                                   struct TtScenario **out_scenario);

/**
 * Release a scenario handle. Null is a no-op.
 *
 * # Safety
 * `scenario` must be null or a pointer obtained from a `tt_scenario_load*`
 * call that has not been freed yet.
 */
void tt_scenario_free(struct TtScenario *scenario);

/**
 * Read the seed the scenario file configured (the seed `tt_run_*` callers
 * pass to reproduce the shipped runs).
 *
 * # Safety
 * `scenario` must be a live handle and `out_seed` a valid pointer.
 */
enum TtStatus tt_scenario_seed(const struct TtScenario *scenario, uint64_t *out_seed);

/**
 * Compute the analytic end-to-end latency budget and return it as a JSON
 * object (fields in microseconds, `total_us` included).
 *
 * # Safety
 * `scenario` must be a live handle and `out_json` a valid pointer; the
 * returned string must be released with `tt_string_free`.
 */
enum TtStatus tt_e2e_bound_json(const struct TtScenario *scenario, char **out_json);

/**
 * Run the closed loop and return the run summary as JSON.
 *
 * # Safety
 * `scenario` must be a live handle and `out_summary_json` a valid pointer;
 * the returned string must be released with `tt_string_free`.
 */
enum TtStatus tt_run_json(const struct TtScenario *scenario,
                          uint64_t seed,
                          uint32_t workers,
                          char **out_summary_json);

/**
 * Run the closed loop and write the full trace set (`network.csv`,
 * `robot.csv`, `orchestration.csv`, `latency.csv`, `summary.json`) under
 * `out_dir`, creating it if missing. `out_summary_json` may be null when
 * only the files are wanted.
 *
 * # Safety
 * `scenario` must be a live handle, `out_dir` a NUL-terminated string, and
 * `out_summary_json` null or a valid pointer; a returned string must be
 * released with `tt_string_free`.
 */
enum TtStatus tt_run_to_dir(const struct TtScenario *scenario,
                            uint64_t seed,
                            uint32_t workers,
                            const char *out_dir,
                            char **out_summary_json);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `text` must be null or a pointer obtained from this library that has not
 * been freed yet.
 */
void tt_string_free(char *text);

/**
 * Message describing this thread's most recent failing call, or null if
 * the most recent call succeeded. The pointer stays valid until the next
 * API call on the same thread — copy it out before calling anything else.
 */
const char *tt_last_error_message(void);

/**
 * Library version as a static string; do not free.
 */
const char *tt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTEDGE_H */
