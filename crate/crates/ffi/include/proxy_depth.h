#ifndef PROXY_DEPTH_H
#define PROXY_DEPTH_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_ARGUMENT = 2,
  LC_STATUS_DEGENERATE = 3,
  LC_STATUS_INVALID_SCENE = 4,
  LC_STATUS_DECODE = 5,
  LC_STATUS_VALIDATION = 6,
  LC_STATUS_IO = 7,
  LC_STATUS_CONTRACT_VIOLATION = 8,
  LC_STATUS_PANIC = 9,
} LcStatus;

/**
 * Depth file encodings.
 */
typedef enum LcFormat {
  LC_FORMAT_PFM = 0,
  LC_FORMAT_PNG16 = 1,
  LC_FORMAT_PNG8INV = 2,
} LcFormat;

/**
 * Footprint recovery methods for `LcBoundaryOptions::method`.
 */
typedef enum LcFootprintMethod {
  LC_FOOTPRINT_METHOD_PROFILE = 0,
  LC_FOOTPRINT_METHOD_GRID = 1,
} LcFootprintMethod;

/**
 * A depth map with its camera.
 */
typedef struct LcDepth LcDepth;

/**
 * An editable scene.
 */
typedef struct LcScene LcScene;

/**
 * Options for `lc_boundary_proxy`. Start from `lc_boundary_options_default`.
 */
typedef struct LcBoundaryOptions {
  /**
   * One of the `LcFootprintMethod` values.
   */
  uint32_t method;
  double cell_m;
  double simplify_eps_cells;
  bool include_floor;
  bool include_ceiling;
  double y_low_percentile;
  double y_high_percentile;
  /**
   * Background depth; zero or negative picks twice the largest input depth.
   */
  double far_m;
  double max_edge_jump;
  bool refine_edges;
  double split_tol_m;
} LcBoundaryOptions;

/**
 * Summary of a depth check.
 */
typedef struct LcCheckResult {
  bool passed;
  double violation_fraction;
  double mean_violation_m;
  double scale;
  size_t valid_pixels;
} LcCheckResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lc_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *lc_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void lc_string_free(char *s);

/**
 * Copies `len` depth values (row-major, metres, 0 for missing) into a new map
 * seen by a pinhole camera with the given horizontal field of view.
 *
 * # Safety
 * `data` must point to `len` readable floats and `out` must be writable.
 */
enum LcStatus lc_depth_new(uint32_t width,
                           uint32_t height,
                           double fov_deg,
                           const float *data,
                           size_t len,
                           struct LcDepth **out);

/**
 * Reads a PFM or PNG depth file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum LcStatus lc_depth_read(const char *path, double fov_deg, struct LcDepth **out);

/**
 * Writes a depth map in the given format.
 *
 * # Safety
 * `depth` must be a live handle and `path` a NUL-terminated string.
 */
enum LcStatus lc_depth_write(const struct LcDepth *depth, const char *path, enum LcFormat format);

/**
 * Width in pixels, or 0 for NULL.
 *
 * # Safety
 * `depth` must be NULL or a live handle.
 */
uint32_t lc_depth_width(const struct LcDepth *depth);

/**
 * Height in pixels, or 0 for NULL.
 *
 * # Safety
 * `depth` must be NULL or a live handle.
 */
uint32_t lc_depth_height(const struct LcDepth *depth);

/**
 * Borrowed row-major values, valid while the handle lives. NULL for NULL.
 *
 * # Safety
 * `depth` must be NULL or a live handle; `len` may be NULL.
 */
const float *lc_depth_data(const struct LcDepth *depth, size_t *len);

/**
 * # Safety
 * `depth` must be NULL or a handle not used afterwards.
 */
void lc_depth_free(struct LcDepth *depth);

/**
 * Parses and validates a scene document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` must be writable.
 */
enum LcStatus lc_scene_from_json(const char *json, struct LcScene **out);

/**
 * Canonical JSON of a scene, released with `lc_string_free`.
 *
 * # Safety
 * `scene` must be a live handle and `out` must be writable.
 */
enum LcStatus lc_scene_to_json(const struct LcScene *scene, char **out);

/**
 * Renders a scene at its own resolution, or at `width` x `height` when both
 * are non-zero.
 *
 * # Safety
 * `scene` must be a live handle and `out` must be writable.
 */
enum LcStatus lc_scene_render(const struct LcScene *scene,
                              uint32_t width,
                              uint32_t height,
                              struct LcDepth **out);

/**
 * # Safety
 * `scene` must be NULL or a handle not used afterwards.
 */
void lc_scene_free(struct LcScene *scene);

struct LcBoundaryOptions lc_boundary_options_default(void);

/**
 * Extracts the room boundary condition and its editable scene.
 * `options` may be NULL for defaults.
 *
 * # Safety
 * Handles must be live and both out-pointers writable.
 */
enum LcStatus lc_boundary_proxy(const struct LcDepth *depth,
                                const struct LcBoundaryOptions *options,
                                struct LcDepth **out_condition,
                                struct LcScene **out_scene);

/**
 * Fits one box per segment label and renders the box condition. Fitted and
 * skipped segments are reported as JSON in `out_boxes_json`, released with
 * `lc_string_free`. A `min_mask_area` of 0 uses the default.
 *
 * # Safety
 * `labels` must point to `len` readable values; handles must be live and
 * out-pointers writable.
 */
enum LcStatus lc_box_proxy(const struct LcDepth *depth,
                           const uint32_t *labels,
                           size_t len,
                           size_t min_mask_area,
                           struct LcDepth **out_condition,
                           char **out_boxes_json);

/**
 * Exact check: passes when the median-aligned mean relative error is at
 * most `tau_rel`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LcStatus lc_check_exact(const struct LcDepth *gen,
                             const struct LcDepth *cond,
                             double tau_rel,
                             struct LcCheckResult *out);

/**
 * Boundary check: passes when at most `eta` of the pixels lie beyond the
 * condition by more than `tau_rel` relative depth.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LcStatus lc_check_boundary(const struct LcDepth *gen,
                                const struct LcDepth *cond,
                                double tau_rel,
                                double eta,
                                struct LcCheckResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROXY_DEPTH_H */
