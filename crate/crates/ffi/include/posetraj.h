#ifndef POSETRAJ_H
#define POSETRAJ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtStatus {
  PT_STATUS_OK = 0,
  PT_STATUS_NULL_POINTER = 1,
  PT_STATUS_INVALID_ARGUMENT = 2,
  PT_STATUS_BEHIND_CAMERA = 3,
  PT_STATUS_SHAPE_MISMATCH = 4,
  PT_STATUS_CAMERA_MISS = 5,
  PT_STATUS_PARSE = 6,
  PT_STATUS_PANIC = 7,
} PtStatus;

typedef struct PtCamera PtCamera;

typedef struct PtPoseTrack PtPoseTrack;

// Trajectory template: 0 is a single arc, 1 an S-curve.
typedef struct PtTrajectorySpec {
  uint32_t template_kind;
  double start_x;
  double start_y;
  double initial_heading;
  double radius;
  double swept_angle;
  uint32_t steps;
  uint32_t keyframes;
} PtTrajectorySpec;

typedef struct PtPose {
  // Unit quaternion `w, x, y, z`.
  double rotation[4];
  double translation[3];
  // Unwrapped yaw.
  double heading;
} PtPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pt_version(void);

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *pt_last_error_message(void);

// Creates the default dataset camera (576x320, ring radius 4, 30° elevation).
//
// # Safety
// `out` must be a valid pointer to writable storage for one pointer.
enum PtStatus pt_camera_default(struct PtCamera **out);

// Creates a camera at `eye` looking at `target` with world `+z` up.
//
// # Safety
// `eye` and `target` must each point to 3 readable doubles; `out` must be writable.
enum PtStatus pt_camera_look_at(double fx,
                                double fy,
                                double cx,
                                double cy,
                                uint32_t width,
                                uint32_t height,
                                const double *eye,
                                const double *target,
                                struct PtCamera **out);

// # Safety
// `camera` must be NULL or a pointer from a `pt_camera_*` constructor not yet freed.
void pt_camera_free(struct PtCamera *camera);

// Projects a world point; fails with `BEHIND_CAMERA` at or behind the camera plane.
//
// # Safety
// `camera` must be live; `point` must point to 3 doubles, `pixel` to 2
// writable doubles; `depth` may be NULL.
enum PtStatus pt_camera_project(const struct PtCamera *camera,
                                const double *point,
                                double *pixel,
                                double *depth);

// Draws a trajectory spec from the default parameter ranges.
//
// # Safety
// `out` must be writable.
enum PtStatus pt_trajectory_sample(uint64_t seed, struct PtTrajectorySpec *out);

// Builds the per-keyframe pose track of `spec` for an object of the given height.
//
// # Safety
// `spec` must be readable and `out` writable.
enum PtStatus pt_pose_track_build(const struct PtTrajectorySpec *spec,
                                  double object_height,
                                  struct PtPoseTrack **out);

// Number of keyframes in a track; 0 for NULL.
//
// # Safety
// `track` must be NULL or live.
uintptr_t pt_pose_track_len(const struct PtPoseTrack *track);

// # Safety
// `track` must be live and `out` writable.
enum PtStatus pt_pose_track_get(const struct PtPoseTrack *track,
                                uintptr_t index,
                                struct PtPose *out);

// # Safety
// `track` must be NULL or a pointer from [`pt_pose_track_build`] not yet freed.
void pt_pose_track_free(struct PtPoseTrack *track);

// Forges one scene and returns its manifest as JSON in `*out`, to be released
// with [`pt_string_free`]. `config_json` may be NULL for the defaults.
//
// # Safety
// `object_id` must be a NUL-terminated string, `raw_extents` 3 readable
// doubles, `config_json` NULL or NUL-terminated, `out` writable.
enum PtStatus pt_forge_scene_json(uint64_t seed,
                                  const char *object_id,
                                  const double *raw_extents,
                                  const char *config_json,
                                  char **out);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void pt_string_free(char *s);

// Position ObjMC between two track sets laid out as `[track][frame][x, y]`.
//
// # Safety
// `generated` and `reference` must each point to `tracks * frames * 2`
// readable doubles; `out` must be writable.
enum PtStatus pt_objmc(const double *generated,
                       const double *reference,
                       uintptr_t tracks,
                       uintptr_t frames,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSETRAJ_H */
