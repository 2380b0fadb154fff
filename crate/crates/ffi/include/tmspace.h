#ifndef TMSPACE_H
#define TMSPACE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TmsStatus {
  TMS_STATUS_OK = 0,
  TMS_STATUS_NULL_POINTER = 1,
  TMS_STATUS_INVALID_UTF8 = 2,
  TMS_STATUS_IO = 3,
  TMS_STATUS_PARSE = 4,
  TMS_STATUS_SHAPE = 5,
  TMS_STATUS_PROBE_MISMATCH = 6,
  TMS_STATUS_METHOD_MISMATCH = 7,
  TMS_STATUS_INVALID_ARGUMENT = 8,
  TMS_STATUS_NUMERIC = 9,
  TMS_STATUS_OUT_OF_RANGE = 10,
  TMS_STATUS_PANIC = 11,
} TmsStatus;

typedef enum TmsMethod {
  TMS_METHOD_SALIENCY = 0,
  TMS_METHOD_GRADIENT_TIMES_INPUT = 1,
  TMS_METHOD_EPSILON_LRP = 2,
} TmsMethod;

typedef enum TmsMode {
  TMS_MODE_SINGLE_PASS = 0,
  TMS_MODE_EXACT = 1,
} TmsMode;

typedef struct TmsAttributionSet TmsAttributionSet;

typedef struct TmsMatrix TmsMatrix;

typedef struct TmsModel TmsModel;

typedef struct TmsProbe TmsProbe;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tms_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *tms_last_error(void);

/**
 * Load a model bundle directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TmsStatus tms_model_load(const char *path, struct TmsModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from `tms_model_load`, freed once.
 */
void tms_model_free(struct TmsModel *model);

/**
 * Model id, owned by the handle.
 *
 * # Safety
 * `model` must be a live handle.
 */
const char *tms_model_id(const struct TmsModel *model);

/**
 * Representation dimension D, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t tms_model_representation_dim(const struct TmsModel *model);

/**
 * Load a probe set from its JSON manifest.
 *
 * # Safety
 * `manifest` must be a NUL-terminated string; `out` must be writable.
 */
enum TmsStatus tms_probe_load(const char *manifest, struct TmsProbe **out);

/**
 * Seeded random subset of `n` images, kept in original order.
 *
 * # Safety
 * `probe` must be a live handle; `out` must be writable.
 */
enum TmsStatus tms_probe_sample(const struct TmsProbe *probe,
                                size_t n,
                                uint64_t seed,
                                struct TmsProbe **out);

/**
 * Number of images, or 0 for a NULL handle.
 *
 * # Safety
 * `probe` must be NULL or a live handle.
 */
size_t tms_probe_len(const struct TmsProbe *probe);

/**
 * Writes the 32-byte probe checksum into `out`.
 *
 * # Safety
 * `probe` must be a live handle; `out` must point to 32 writable bytes.
 */
enum TmsStatus tms_probe_checksum(const struct TmsProbe *probe, uint8_t *out);

/**
 * # Safety
 * `probe` must be NULL or a handle from this library, freed once.
 */
void tms_probe_free(struct TmsProbe *probe);

/**
 * Attribution maps of `model` over every probe image. `method` is a
 * `TmsMethod` and `mode` a `TmsMode` value; `epsilon` is used only for
 * `TMS_METHOD_EPSILON_LRP`.
 *
 * # Safety
 * `model` and `probe` must be live handles; `out` must be writable.
 */
enum TmsStatus tms_attribute(const struct TmsModel *model,
                             const struct TmsProbe *probe,
                             uint32_t method,
                             double epsilon,
                             uint32_t mode,
                             struct TmsAttributionSet **out);

/**
 * Forward-and-backward propagations spent computing the set.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
uint64_t tms_attribution_passes(const struct TmsAttributionSet *set);

/**
 * Copy map `index` (probe layout, height x width x channels, row-major)
 * into `out`, which holds `capacity` doubles. `*written` receives the map
 * length even when `capacity` is too small.
 *
 * # Safety
 * `set` must be a live handle; `out` must hold `capacity` doubles;
 * `written` must be writable.
 */
enum TmsStatus tms_attribution_map(const struct TmsAttributionSet *set,
                                   size_t index,
                                   double *out,
                                   size_t capacity,
                                   size_t *written);

/**
 * # Safety
 * `set` must be a live handle; `path` a NUL-terminated string.
 */
enum TmsStatus tms_attribution_write_cache(const struct TmsAttributionSet *set, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TmsStatus tms_attribution_read_cache(const char *path, struct TmsAttributionSet **out);

/**
 * # Safety
 * `set` must be NULL or a handle from this library, freed once.
 */
void tms_attribution_free(struct TmsAttributionSet *set);

/**
 * Model distance between two attribution sets; `INFINITY` when the cosine
 * sum is not positive.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum TmsStatus tms_distance(const struct TmsAttributionSet *a,
                            const struct TmsAttributionSet *b,
                            double *out);

/**
 * Pairwise affinity over `count` sets.
 *
 * # Safety
 * `sets` must point to `count` live handles; `out` must be writable.
 */
enum TmsStatus tms_affinity(const struct TmsAttributionSet *const *sets,
                            size_t count,
                            struct TmsMatrix **out);

/**
 * Number of models, or 0 for a NULL handle.
 *
 * # Safety
 * `matrix` must be NULL or a live handle.
 */
size_t tms_matrix_size(const struct TmsMatrix *matrix);

/**
 * Id of row `i`, owned by the handle; NULL when out of range.
 *
 * # Safety
 * `matrix` must be NULL or a live handle.
 */
const char *tms_matrix_id(const struct TmsMatrix *matrix, size_t i);

/**
 * Mean cosine similarity between models `i` and `j`.
 *
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum TmsStatus tms_matrix_similarity(const struct TmsMatrix *matrix,
                                     size_t i,
                                     size_t j,
                                     double *out);

/**
 * Distance between models `i` and `j`.
 *
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum TmsStatus tms_matrix_distance(const struct TmsMatrix *matrix, size_t i, size_t j, double *out);

/**
 * # Safety
 * `matrix` must be NULL or a handle from this library, freed once.
 */
void tms_matrix_free(struct TmsMatrix *matrix);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TMSPACE_H */
