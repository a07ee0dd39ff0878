#ifndef SPLATLOC_H
#define SPLATLOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values match the command-line exit codes where they
// overlap.
typedef enum SplatlocStatus {
  SPLATLOC_STATUS_OK = 0,
  SPLATLOC_STATUS_NULL_POINTER = 1,
  SPLATLOC_STATUS_INPUT_ERROR = 2,
  SPLATLOC_STATUS_NUMERIC_ERROR = 4,
  SPLATLOC_STATUS_PANIC = 5,
} SplatlocStatus;

// Opaque Gaussian scene.
typedef struct SplatlocScene SplatlocScene;

typedef struct SplatlocIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double near;
  double far;
} SplatlocIntrinsics;

// World-to-camera pose: `x_cam = R(q) x_world + t`, `q = (w, x, y, z)`.
typedef struct SplatlocPose {
  double q[4];
  double t[3];
} SplatlocPose;

// Summary of one localization run.
typedef struct SplatlocLocalizeInfo {
  double final_loss;
  uint32_t iterations;
  uint32_t best_iteration;
  bool converged;
} SplatlocLocalizeInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or null. Valid until the next call
// into this library from the same thread.
const char *splatloc_last_error(void);

// Library version as a static nul-terminated string.
const char *splatloc_version(void);

// Loads a scene file written by `splatloc build-scene` or `synth`.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum SplatlocStatus splatloc_scene_load(const char *path, struct SplatlocScene **out);

// Releases a scene. Null is ignored.
//
// # Safety
// `scene` must come from [`splatloc_scene_load`] and not be used afterwards.
void splatloc_scene_free(struct SplatlocScene *scene);

// Number of Gaussians in the scene, 0 for null.
//
// # Safety
// `scene` must be null or a live handle.
size_t splatloc_scene_len(const struct SplatlocScene *scene);

// Renders normalized depth (0 where uncovered) and optionally accumulated
// alpha. `config_toml` may be null for defaults.
//
// # Safety
// Pointers must be valid; `out_depth` and non-null `out_alpha` must hold
// `width * height` doubles.
enum SplatlocStatus splatloc_render(const struct SplatlocScene *scene,
                                    const struct SplatlocIntrinsics *intrinsics,
                                    const struct SplatlocPose *pose,
                                    const char *config_toml,
                                    double *out_depth,
                                    double *out_alpha);

// Estimates the pose of one depth image (meters, values `<= 0` or
// non-finite are invalid) starting from `init`.
//
// # Safety
// Pointers must be valid; `depth` holds `width * height` doubles;
// `info` may be null.
enum SplatlocStatus splatloc_localize(const struct SplatlocScene *scene,
                                      const struct SplatlocIntrinsics *intrinsics,
                                      const double *depth,
                                      const struct SplatlocPose *init,
                                      const char *config_toml,
                                      struct SplatlocPose *out_pose,
                                      struct SplatlocLocalizeInfo *info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLATLOC_H */
