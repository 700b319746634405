#ifndef GEOUNC_H
#define GEOUNC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum GeouncStatus {
  GEOUNC_STATUS_OK = 0,
  GEOUNC_STATUS_NULL_POINTER = 1,
  GEOUNC_STATUS_INVALID_ARGUMENT = 2,
  GEOUNC_STATUS_IO = 3,
  GEOUNC_STATUS_COMPUTE = 4,
  GEOUNC_STATUS_PANIC = 5,
} GeouncStatus;

/**
 * A loaded dataset directory.
 */
typedef struct GeouncDataset GeouncDataset;

/**
 * A loaded uncertainty grid.
 */
typedef struct GeouncGrid GeouncGrid;

/**
 * Sparsification metrics of [`geounc_evaluate`].
 */
typedef struct GeouncReport {
  double ause_mse;
  double ause_mae;
  double ause_3d;
  double cd;
  size_t n_pixels;
  size_t n_points;
} GeouncReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *geounc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *geounc_version(void);

/**
 * Loads a dataset directory written by `geounc gen`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum GeouncStatus geounc_dataset_load(const char *path, struct GeouncDataset **out);

/**
 * # Safety
 * `ds` must come from [`geounc_dataset_load`] or be null.
 */
void geounc_dataset_free(struct GeouncDataset *ds);

/**
 * Number of views; 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t geounc_dataset_view_count(const struct GeouncDataset *ds);

/**
 * Loads a `UNCG` grid file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum GeouncStatus geounc_grid_load(const char *path, struct GeouncGrid **out);

/**
 * # Safety
 * `grid` must come from [`geounc_grid_load`] or be null.
 */
void geounc_grid_free(struct GeouncGrid *grid);

/**
 * Writes the node counts per axis into `dims[0..3]`.
 *
 * # Safety
 * `grid` must be a live handle and `dims` point to 3 writable values.
 */
enum GeouncStatus geounc_grid_dims(const struct GeouncGrid *grid, size_t *dims);

/**
 * Evaluates the uncertainty at `n` points given as packed `x y z` triples.
 *
 * # Safety
 * `xyz` must hold `3n` values and `out` room for `n`.
 */
enum GeouncStatus geounc_grid_eval(const struct GeouncGrid *grid,
                                   const double *xyz,
                                   size_t n,
                                   double *out);

/**
 * AUSE of `n` errors ranked by `n` uncertainties.
 *
 * # Safety
 * `errors` and `uncertainties` must hold `n` values; `out` must be writable.
 */
enum GeouncStatus geounc_ause(const double *errors,
                              const double *uncertainties,
                              size_t n,
                              double *out);

/**
 * Symmetric chamfer distance between two packed `x y z` point sets.
 *
 * # Safety
 * `a` must hold `3na` values, `b` `3nb`; `out` must be writable.
 */
enum GeouncStatus geounc_chamfer(const double *a,
                                 size_t na,
                                 const double *b,
                                 size_t nb,
                                 double *out);

/**
 * Full evaluation of `grid` on `ds` with default settings.
 *
 * # Safety
 * Both handles must be live; `out` must be writable.
 */
enum GeouncStatus geounc_evaluate(const struct GeouncDataset *ds,
                                  const struct GeouncGrid *grid,
                                  struct GeouncReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOUNC_H */
