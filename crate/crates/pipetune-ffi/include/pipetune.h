#ifndef PIPETUNE_H
#define PIPETUNE_H

/* Generated by cbindgen from pipetune-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of fallible `pt_*` calls.
 */
typedef enum PtStatus {
  PT_STATUS_PT_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PT_STATUS_PT_NULL_POINTER = 1,
  /**
   * Input text was not valid UTF-8.
   */
  PT_STATUS_PT_INVALID_UTF8 = 2,
  /**
   * JSON parsing failed.
   */
  PT_STATUS_PT_PARSE_ERROR = 3,
  /**
   * The document parsed but failed validation.
   */
  PT_STATUS_PT_INVALID_SPEC = 4,
  /**
   * An index or buffer length did not match the environment.
   */
  PT_STATUS_PT_BAD_DIMENSION = 5,
  /**
   * The operation itself failed; see `pt_last_error`.
   */
  PT_STATUS_PT_RUNTIME_ERROR = 6,
  /**
   * A panic was caught at the boundary.
   */
  PT_STATUS_PT_PANIC = 7,
} PtStatus;

/**
 * Opaque RL environment handle.
 */
typedef struct PtEnv PtEnv;

/**
 * Result of one environment step.
 */
typedef struct PtStepOutcome {
  double reward;
  double throughput_norm;
  double achieved_rate;
  double mem_used_mb;
  uint32_t cpu_budget;
  /**
   * Index of the bottleneck stage, or -1 during downtime.
   */
  int32_t bottleneck_stage;
  /**
   * OOM event occurred on this step.
   */
  bool crashed;
  /**
   * The action needed clamping or cancellation to stay feasible.
   */
  bool clamped;
} PtStepOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message (UTF-8, NUL-terminated) into `buf`.
 * Returns the full message length in bytes excluding the terminator; when
 * the buffer is too small the message is truncated.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (the call then only
 * reports the length).
 */
size_t pt_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string. Never freed.
 */
const char *pt_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must have been returned by a `pt_*` function and not freed before.
 */
void pt_string_free(char *s);

/**
 * Creates an environment from a JSON document. On success writes the handle
 * to `out_env`; release it with [`pt_env_free`].
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out_env` a valid
 * pointer.
 */
enum PtStatus pt_env_new_from_json(const char *config_json, struct PtEnv **out_env);

/**
 * Releases an environment handle. Null is ignored.
 *
 * # Safety
 * `env` must originate from [`pt_env_new_from_json`] and not be used after.
 */
void pt_env_free(struct PtEnv *env);

/**
 * Number of knobs (r): CPU stages plus the prefetch knob when present.
 *
 * # Safety
 * `env` must be a live handle.
 */
size_t pt_env_knobs(const struct PtEnv *env);

/**
 * Length of the observation vector (6 + knobs).
 *
 * # Safety
 * `env` must be a live handle.
 */
size_t pt_env_state_len(const struct PtEnv *env);

/**
 * Joint action count, 5^r.
 *
 * # Safety
 * `env` must be a live handle.
 */
uint64_t pt_env_action_count(const struct PtEnv *env);

/**
 * Current CPU budget.
 *
 * # Safety
 * `env` must be a live handle.
 */
uint32_t pt_env_cpu_budget(const struct PtEnv *env);

/**
 * Resets the environment to the even-division allocation.
 *
 * # Safety
 * `env` must be a live handle.
 */
enum PtStatus pt_env_reset(struct PtEnv *env);

/**
 * Writes the current observation vector into `out` (length
 * [`pt_env_state_len`]).
 *
 * # Safety
 * `env` must be a live handle; `out` must point to `len` writable doubles.
 */
enum PtStatus pt_env_state(const struct PtEnv *env, double *out, size_t len);

/**
 * Writes the per-joint-action feasibility mask (0/1 bytes) into `out`
 * (length [`pt_env_action_count`]).
 *
 * # Safety
 * `env` must be a live handle; `out` must point to `len` writable bytes.
 */
enum PtStatus pt_env_feasible_mask(const struct PtEnv *env, uint8_t *out, size_t len);

/**
 * Writes the current allocation: CPU counts into `out_cpus` and the
 * prefetch unit count into `out_prefetch_units`.
 *
 * # Safety
 * `env` must be a live handle; `out_cpus` must hold `len` u32 slots and
 * `out_prefetch_units` must be valid.
 */
enum PtStatus pt_env_allocation(const struct PtEnv *env,
                                uint32_t *out_cpus,
                                size_t len,
                                uint32_t *out_prefetch_units);

/**
 * Applies the joint action with the given index (base-5 positional code,
 * see the library docs) and advances one step. The new observation can be
 * read back with [`pt_env_state`].
 *
 * # Safety
 * `env` must be a live handle; `out` (optional) must be valid if non-null.
 */
enum PtStatus pt_env_step(struct PtEnv *env, uint64_t action_index, struct PtStepOutcome *out);

/**
 * One-shot noiseless throughput report for the document's allocation (or
 * the even split when none is given). Returns a JSON string to free with
 * [`pt_string_free`], or null on error.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string.
 */
char *pt_simulate_json(const char *config_json);

/**
 * Best allocation for the document's pipeline/machine/workload: brute force
 * within the search guard, greedy-true beyond it. Returns a JSON string to
 * free with [`pt_string_free`], or null on error.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string.
 */
char *pt_oracle_json(const char *config_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIPETUNE_H */
