#ifndef TSH_H
#define TSH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TSH_MODALITY_RGB 1

#define TSH_MODALITY_SEMANTIC 2

#define TSH_MODALITY_DEPTH 4

typedef enum TshStatus {
  TSH_STATUS_OK = 0,
  TSH_STATUS_NULL_POINTER = 1,
  TSH_STATUS_INVALID_UTF8 = 2,
  TSH_STATUS_CONFIG_INVALID = 3,
  TSH_STATUS_NOT_RESET = 4,
  TSH_STATUS_EPISODE_DONE = 5,
  TSH_STATUS_UNKNOWN_ENTITY = 6,
  TSH_STATUS_NOT_CONTROLLABLE = 7,
  TSH_STATUS_INVALID_ACTION = 8,
  TSH_STATUS_UNKNOWN_CAMERA = 9,
  TSH_STATUS_UNKNOWN_MOUNT_ENTITY = 10,
  TSH_STATUS_SENSORS_DISABLED = 11,
  TSH_STATUS_IO = 12,
  TSH_STATUS_INVALID_EVENT = 13,
  TSH_STATUS_PANIC = 14,
  TSH_STATUS_INTERNAL = 15,
} TshStatus;

/**
 * Opaque environment handle.
 */
typedef struct TshEnv TshEnv;

/**
 * Opaque protocol session handle.
 */
typedef struct TshSession TshSession;

/**
 * A rendered frame. Buffers absent from the request are NULL with length 0.
 * `depth_len` counts floats, not bytes.
 */
typedef struct TshFrame {
  uint64_t tick;
  uint32_t width;
  uint32_t height;
  double pose_x;
  double pose_y;
  double pose_z;
  double pose_heading;
  uint8_t *rgb;
  size_t rgb_len;
  uint8_t *semantic;
  size_t semantic_len;
  float *depth;
  size_t depth_len;
} TshFrame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version string. Static; do not free.
 */
const char *tsh_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into the library from the same thread.
 */
const char *tsh_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tsh_string_free(char *s);

/**
 * Create an environment. It must be reset before stepping.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TshStatus tsh_env_new(struct TshEnv **out);

/**
 * # Safety
 * `env` must come from [`tsh_env_new`] and not have been freed.
 */
void tsh_env_free(struct TshEnv *env);

/**
 * Reset from a scenario file. The initial transition is written to
 * `out_json` as a JSON string.
 *
 * # Safety
 * Pointers must be valid; `path` NUL-terminated.
 */
enum TshStatus tsh_env_reset_path(struct TshEnv *env, const char *path, char **out_json);

/**
 * Reset from a scenario given as JSON text. `base_dir` resolves relative
 * map paths; NULL means the working directory.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum TshStatus tsh_env_reset_json(struct TshEnv *env,
                                  const char *config_json,
                                  const char *base_dir,
                                  char **out_json);

/**
 * Advance one tick. `actions_json` is an object keyed by entity id; NULL
 * means no actions.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum TshStatus tsh_env_step(struct TshEnv *env, const char *actions_json, char **out_json);

/**
 * Running trace hash of the current episode.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TshStatus tsh_env_trace_hash(const struct TshEnv *env, uint64_t *out);

/**
 * Current tick.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TshStatus tsh_env_tick(const struct TshEnv *env, uint64_t *out);

/**
 * Serialized snapshot of the full world.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TshStatus tsh_env_snapshot(const struct TshEnv *env, char **out_json);

/**
 * Render a camera at the current tick. `modality_mask` ORs the
 * `TSH_MODALITY_*` bits; 0 renders the camera's configured modalities.
 *
 * # Safety
 * Pointers must be valid; `camera` NUL-terminated.
 */
enum TshStatus tsh_env_render(const struct TshEnv *env,
                              const char *camera,
                              uint32_t modality_mask,
                              struct TshFrame **out);

/**
 * # Safety
 * `frame` must come from [`tsh_env_render`] and not have been freed.
 */
void tsh_frame_free(struct TshFrame *frame);

/**
 * Protocol session: feed request lines, get response lines. `base_dir`
 * resolves relative paths in reset requests; NULL means the working directory.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TshStatus tsh_session_new(const char *base_dir, struct TshSession **out);

/**
 * Handle one request line. Protocol-level failures are reported inside the
 * response line, so this returns Ok for any well-formed C call.
 *
 * # Safety
 * Pointers must be valid; `line` NUL-terminated.
 */
enum TshStatus tsh_session_request(struct TshSession *session, const char *line, char **out_line);

/**
 * # Safety
 * `session` must come from [`tsh_session_new`] and not have been freed.
 */
void tsh_session_free(struct TshSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSH_H */
