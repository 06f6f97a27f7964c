#ifndef KEPLER_H
#define KEPLER_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Landmarks per face.
 */
#define KEPLER_NUM_LANDMARKS 21

/**
 * Doubles per shape: `x, y` for each landmark.
 */
#define KEPLER_SHAPE_LEN 42

/**
 * Result code of every call.
 */
typedef enum {
  KEPLER_STATUS_OK = 0,
  KEPLER_STATUS_NULL_ARGUMENT = 1,
  KEPLER_STATUS_INVALID_ARGUMENT = 2,
  KEPLER_STATUS_IO = 3,
  KEPLER_STATUS_FORMAT = 4,
  KEPLER_STATUS_MISSING_STAGE = 5,
  KEPLER_STATUS_INTERNAL = 6,
} KeplerStatus;

/**
 * A loaded cascade. Create with `kepler_model_load`, release with
 * `kepler_model_free`.
 */
typedef struct KeplerModel KeplerModel;

/**
 * Output of `kepler_model_run`.
 */
typedef struct {
  double points[KEPLER_SHAPE_LEN];
  /**
   * Clamped to [0, 1].
   */
  double visibility[KEPLER_NUM_LANDMARKS];
  /**
   * Yaw, pitch, roll in degrees.
   */
  double pose[3];
} KeplerPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *kepler_last_error(void);

/**
 * Library version as a static string.
 */
const char *kepler_version(void);

size_t kepler_num_landmarks(void);

/**
 * Load the model bundle in directory `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
KeplerStatus kepler_model_load(const char *dir, KeplerModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `kepler_model_load` and not be used afterwards.
 */
void kepler_model_free(KeplerModel *model);

/**
 * Non-zero when the bundle contains the local correction stage.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
int kepler_model_has_stage5(const KeplerModel *model);

/**
 * Run the cascade on an interleaved 8-bit RGB image.
 *
 * `stride` is the byte distance between rows (at least `3 * width`),
 * `face_box` is `x, y, w, h` in pixels. `stage5` non-zero enables the
 * local correction stage when the bundle has one.
 *
 * # Safety
 * `rgb` must hold `stride * height` bytes, `face_box` four doubles, and
 * `model` and `out` must be valid.
 */
KeplerStatus kepler_model_run(const KeplerModel *model,
                              const uint8_t *rgb,
                              size_t width,
                              size_t height,
                              size_t stride,
                              const double *face_box,
                              int stage5,
                              KeplerPrediction *out);

/**
 * Bounded correction from `current` towards `truth`: every visible error
 * vector is shortened to at most `bound` pixels. All shape arrays hold 42
 * doubles and `visibility` 21.
 *
 * # Safety
 * All pointers must be valid for the sizes above.
 */
KeplerStatus kepler_bounded_correction(const double *truth,
                                       const double *current,
                                       const double *visibility,
                                       double bound,
                                       double *out);

/**
 * Normalised mean error of `pred` against `truth` over the landmarks
 * visible in `visibility`, divided by `face_size`.
 *
 * # Safety
 * All pointers must be valid; shapes hold 42 doubles, `visibility` 21.
 */
KeplerStatus kepler_nme(const double *pred,
                        const double *truth,
                        const double *visibility,
                        double face_size,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KEPLER_H */
