#ifndef SACC_H
#define SACC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaccStatus {
  SACC_STATUS_OK = 0,
  SACC_STATUS_NULL_POINTER = 1,
  SACC_STATUS_INVALID_ARGUMENT = 2,
  SACC_STATUS_IO = 3,
  SACC_STATUS_FORMAT = 4,
  /**
   * No intact object in the source scene.
   */
  SACC_STATUS_NO_OBJECT = 5,
  SACC_STATUS_RUNTIME = 6,
  SACC_STATUS_PANIC = 7,
} SaccStatus;

typedef struct SaccAsset SaccAsset;

typedef struct SaccModel SaccModel;

typedef struct SaccScene SaccScene;

/**
 * Placement `(s, tx, ty)` in the frame's normalized coordinates.
 */
typedef struct SaccTransform {
  double s;
  double tx;
  double ty;
} SaccTransform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's last error, or null if none. Valid until the next failing call.
 */
const char *sacc_last_error(void);

/**
 * Static, nul-terminated library version.
 */
const char *sacc_version(void);

/**
 * # Safety
 * `path` is a nul-terminated string; `out` is writable.
 */
enum SaccStatus sacc_model_load(const char *path, struct SaccModel **out);

/**
 * # Safety
 * `model` is null or a handle from [`sacc_model_load`] not yet freed.
 */
void sacc_model_free(struct SaccModel *model);

/**
 * Loads a scene directory (image, layout and instance map).
 *
 * # Safety
 * `dir` is a nul-terminated string; `out` is writable.
 */
enum SaccStatus sacc_scene_load(const char *dir, struct SaccScene **out);

/**
 * # Safety
 * `scene` is null or a live scene handle.
 */
void sacc_scene_free(struct SaccScene *scene);

/**
 * # Safety
 * `scene` is a live handle; `width` and `height` are writable.
 */
enum SaccStatus sacc_scene_size(const struct SaccScene *scene, size_t *width, size_t *height);

/**
 * Cuts an intact object out of `scene` at the model's patch size.
 *
 * # Safety
 * Handles are live; `out` is writable.
 */
enum SaccStatus sacc_asset_extract(const struct SaccModel *model,
                                   const struct SaccScene *scene,
                                   uint64_t seed,
                                   struct SaccAsset **out);

/**
 * # Safety
 * `asset` is null or a live asset handle.
 */
void sacc_asset_free(struct SaccAsset *asset);

/**
 * Predicts a placement for `asset` in `scene` with the latent drawn from `seed`.
 *
 * # Safety
 * Handles are live; `out` is writable.
 */
enum SaccStatus sacc_infer_transform(const struct SaccModel *model,
                                     const struct SaccScene *scene,
                                     const struct SaccAsset *asset,
                                     uint64_t seed,
                                     struct SaccTransform *out);

/**
 * Writes the composite as planar RGB `f32` (`3 x H x W`) into `buf` of `len` floats.
 *
 * # Safety
 * Handles are live; `buf` holds `len` writable floats.
 */
enum SaccStatus sacc_compose(const struct SaccScene *scene,
                             const struct SaccAsset *asset,
                             const struct SaccTransform *transform,
                             float *buf,
                             size_t len);

/**
 * Composes and writes the result as an RGB PNG.
 *
 * # Safety
 * Handles are live; `path` is a nul-terminated string.
 */
enum SaccStatus sacc_compose_png(const struct SaccScene *scene,
                                 const struct SaccAsset *asset,
                                 const struct SaccTransform *transform,
                                 const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SACC_H */
