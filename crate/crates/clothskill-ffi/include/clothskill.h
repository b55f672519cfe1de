#ifndef CLOTHSKILL_H
#define CLOTHSKILL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum {
  CSK_STATUS_OK = 0,
  CSK_STATUS_NULL_ARGUMENT = -1,
  CSK_STATUS_INVALID_UTF8 = -2,
  CSK_STATUS_INVALID_ARGUMENT = -3,
  CSK_STATUS_GRASP_MISS = -4,
  CSK_STATUS_SIMULATION_DIVERGED = -5,
  CSK_STATUS_PARSE_ERROR = -6,
  CSK_STATUS_PLAN_ERROR = -7,
  CSK_STATUS_IO_ERROR = -8,
  CSK_STATUS_BUFFER_TOO_SMALL = -9,
  CSK_STATUS_INTERNAL = -99,
} CskStatus;

/**
 * A simulation environment: template, state, physics, and camera.
 */
typedef struct CskEnv CskEnv;

/**
 * A loaded affordance model checkpoint.
 */
typedef struct CskModel CskModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *csk_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated) and returns the required buffer size including the
 * terminator. With a null or too-small buffer nothing is copied.
 */
uintptr_t csk_last_error(char *buf, uintptr_t cap);

/**
 * Creates an environment for a cloth type. Passing 0 for any dimension
 * selects the default size and spacing (0.025 m).
 */
CskStatus csk_env_new(const char *cloth_type,
                      double width_m,
                      double height_m,
                      double spacing_m,
                      CskEnv **out_env);

/**
 * Frees an environment handle. A null handle is a no-op.
 */
void csk_env_free(CskEnv *env);

/**
 * Resets the cloth to a flat placement: rotation about its centroid, then
 * translation.
 */
CskStatus csk_env_place(CskEnv *env, double rotation_z, double tx, double ty);

CskStatus csk_env_particle_count(CskEnv *env, uintptr_t *out_count);

/**
 * Copies particle positions as x,y,z triples; `cap` counts f64 values.
 */
CskStatus csk_env_positions(CskEnv *env, double *out, uintptr_t cap);

/**
 * Current world position of a named part's particle.
 */
CskStatus csk_env_keypoint(CskEnv *env, const char *part, double *out_xyz);

/**
 * Runs one pick-and-place (world coordinates) and settles.
 */
CskStatus csk_env_pick_place(CskEnv *env,
                             double pick_x,
                             double pick_y,
                             double pick_z,
                             double place_x,
                             double place_y,
                             double place_z);

/**
 * Steps until the cloth's kinetic energy falls below the settle threshold.
 */
CskStatus csk_env_settle(CskEnv *env);

/**
 * Renders the depth image; `cap` counts f32 values. Width and height are
 * always reported.
 */
CskStatus csk_env_render_depth(CskEnv *env,
                               float *out,
                               uintptr_t cap,
                               uint32_t *out_width,
                               uint32_t *out_height);

/**
 * Renders the coverage mask as 0/1 bytes; `cap` counts bytes.
 */
CskStatus csk_env_render_mask(CskEnv *env,
                              uint8_t *out,
                              uintptr_t cap,
                              uint32_t *out_width,
                              uint32_t *out_height);

/**
 * Parses a basic instruction. `out_kind` receives 0 for pick, 1 for
 * place; the part label goes to `part_buf`.
 */
CskStatus csk_parse_instruction(const char *text,
                                const char *cloth_type,
                                int32_t *out_kind,
                                char *part_buf,
                                uintptr_t part_cap,
                                uintptr_t *out_len);

/**
 * Plans a folding task with the rule planner; the steps are written
 * newline-separated.
 */
CskStatus csk_plan_rule(const char *instruction,
                        const char *cloth_type,
                        char *buf,
                        uintptr_t cap,
                        uintptr_t *out_len);

/**
 * The part vocabulary of a cloth type, newline-separated.
 */
CskStatus csk_vocab(const char *cloth_type, char *buf, uintptr_t cap, uintptr_t *out_len);

/**
 * Geometric reference grounding: the pixel of the instruction's keypoint
 * in the environment's camera.
 */
CskStatus csk_oracle_predict(CskEnv *env,
                             const char *instruction,
                             uint32_t *out_px,
                             uint32_t *out_py);

/**
 * Loads an affordance model checkpoint.
 */
CskStatus csk_model_load(const char *path, CskModel **out_model);

/**
 * Frees a model handle. A null handle is a no-op.
 */
void csk_model_free(CskModel *model);

/**
 * Predicts the pick/place pixel for an instruction against the
 * environment's current rendered observation.
 */
CskStatus csk_model_predict(CskModel *model,
                            CskEnv *env,
                            const char *instruction,
                            uint32_t *out_px,
                            uint32_t *out_py);

/**
 * Executes the rule plan for a task instruction in the environment using
 * the oracle grounding, returning after the final settle.
 */
CskStatus csk_env_run_task(CskEnv *env, const char *instruction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLOTHSKILL_H */
