#ifndef SCAFFOLD_H
#define SCAFFOLD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScaffoldStatus {
  SCAFFOLD_STATUS_OK = 0,
  SCAFFOLD_STATUS_NULL_ARGUMENT = 1,
  SCAFFOLD_STATUS_INVALID_UTF8 = 2,
  SCAFFOLD_STATUS_INVALID_ARGUMENT = 3,
  SCAFFOLD_STATUS_UNKNOWN_TASK = 4,
  SCAFFOLD_STATUS_NOT_ACTIVE = 5,
  SCAFFOLD_STATUS_ENVIRONMENT = 6,
  SCAFFOLD_STATUS_NO_CODE = 7,
  SCAFFOLD_STATUS_MULTIPLE_BLOCKS = 8,
  SCAFFOLD_STATUS_IO = 9,
  SCAFFOLD_STATUS_GATEWAY = 10,
  SCAFFOLD_STATUS_PANIC = 99,
} ScaffoldStatus;

/**
 * An in-process world. Create with [`scaffold_world_new`].
 */
typedef struct ScaffoldWorld ScaffoldWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *scaffold_last_error(void);

/**
 * Static, never freed.
 */
const char *scaffold_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void scaffold_string_free(char *s);

/**
 * Creates a world over the built-in tasks, or over the task files in
 * `tasks_dir` when it is not null.
 *
 * # Safety
 * `tasks_dir` must be null or a NUL-terminated string. `out` must be writable.
 */
enum ScaffoldStatus scaffold_world_new(const char *tasks_dir, struct ScaffoldWorld **out);

/**
 * # Safety
 * `world` must be null or a handle from [`scaffold_world_new`], not yet freed.
 */
void scaffold_world_free(struct ScaffoldWorld *world);

/**
 * Starts an episode. `out_json` receives the first observation as JSON.
 *
 * # Safety
 * `world` must be a live handle, `task_id` a NUL-terminated string and
 * `out_json` writable.
 */
enum ScaffoldStatus scaffold_world_reset(struct ScaffoldWorld *world,
                                         const char *task_id,
                                         char **out_json);

/**
 * Runs one code action. A failing action is still `Ok`: the observation
 * JSON carries `ok: false` and the error kind.
 *
 * # Safety
 * As for [`scaffold_world_reset`].
 */
enum ScaffoldStatus scaffold_world_execute(struct ScaffoldWorld *world,
                                           const char *code,
                                           char **out_json);

/**
 * # Safety
 * `world` must be a live handle. The out pointers must be writable.
 */
enum ScaffoldStatus scaffold_world_evaluate(struct ScaffoldWorld *world,
                                            uint8_t *out_reward,
                                            size_t *out_passed,
                                            size_t *out_total);

/**
 * Wilson score interval for `k` successes in `n`, as fractions.
 *
 * # Safety
 * `out_lo` and `out_hi` must be writable.
 */
enum ScaffoldStatus scaffold_wilson_interval(uint64_t k,
                                             uint64_t n,
                                             double confidence,
                                             double *out_lo,
                                             double *out_hi);

/**
 * The code of the single fenced block in an agent reply.
 * Returns `NoCode` or `MultipleBlocks` when there is not exactly one.
 *
 * # Safety
 * `completion` must be a NUL-terminated string and `out_code` writable.
 */
enum ScaffoldStatus scaffold_extract_action(const char *completion, char **out_code);

/**
 * Checks a corrector patch against API docs given as a JSON array.
 * `out_json` receives `{"valid":true,"code":...}` or
 * `{"valid":false,"violations":[...]}`; both are `Ok`.
 *
 * # Safety
 * `patch` and `docs_json` must be NUL-terminated strings, `out_json` writable.
 */
enum ScaffoldStatus scaffold_validate_patch(const char *patch,
                                            const char *docs_json,
                                            char **out_json);

/**
 * Replays recorded model traffic over the built-in tasks and returns the
 * trajectories as JSONL. `label` is `baseline`, `correction_only` or
 * `full_scaffold`. `task_ids` is a comma list, or null for every task.
 * When an episode hits a model error (usually a missing fixture) the
 * trajectories are still written and the status is `Gateway`.
 *
 * # Safety
 * String arguments must be NUL-terminated (`task_ids` may be null) and
 * `out_jsonl` writable.
 */
enum ScaffoldStatus scaffold_run_replay(const char *fixtures_dir,
                                        const char *label,
                                        const char *task_ids,
                                        char **out_jsonl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCAFFOLD_H */
