#ifndef ROIREG_H
#define ROIREG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RoiregStatus {
  ROIREG_STATUS_OK = 0,
  ROIREG_STATUS_NULL_POINTER = 1,
  ROIREG_STATUS_INVALID_ARGUMENT = 2,
  ROIREG_STATUS_IO = 3,
  ROIREG_STATUS_FORMAT = 4,
  ROIREG_STATUS_DIM_MISMATCH = 5,
  ROIREG_STATUS_EMPTY_PAIRING = 6,
  ROIREG_STATUS_NON_FINITE_LOSS = 7,
  ROIREG_STATUS_OUT_OF_RANGE = 8,
  ROIREG_STATUS_BUFFER_TOO_SMALL = 9,
  ROIREG_STATUS_PANIC = 10,
  ROIREG_STATUS_OTHER = 11,
} RoiregStatus;

// A moving or fixed case read from an interchange directory.
typedef struct RoiregCase RoiregCase;

// A dense displacement field plus its voxel spacing.
typedef struct RoiregDdf RoiregDdf;

// Matched ROI pairs plus the voxel spacing they live on.
typedef struct RoiregPairing RoiregPairing;

typedef struct RoiregMatchConfig {
  double epsilon;
  size_t min_area;
  size_t max_area;
  double max_overlap;
  double min_pred_iou;
  double min_stability;
  double min_link_iou;
  // Maximize total similarity instead of greedy selection.
  bool optimal;
} RoiregMatchConfig;

typedef struct RoiregPairInfo {
  // Index into the moving candidate list.
  size_t moving_index;
  // Index into the fixed candidate list.
  size_t fixed_index;
  double similarity;
  size_t moving_area;
  size_t fixed_area;
} RoiregPairInfo;

typedef struct RoiregFitConfig {
  // Smoothness weight.
  double lambda;
  size_t iterations;
  double step_size;
  double adam_beta1;
  double adam_beta2;
  double adam_eps;
  double dice_smooth;
  double convergence_tol;
} RoiregFitConfig;

typedef struct RoiregEvalSummary {
  double mean_dice;
  // NaN when every ROI warped to an empty mask.
  double tre;
  size_t num_rois;
  size_t dropped_rois;
} RoiregEvalSummary;

typedef struct RoiregRoundtripSummary {
  size_t num_points;
  // Points displaced outside the grid.
  size_t skipped;
  bool integer_field;
  double max_abs_error;
} RoiregRoundtripSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Engine version as a static NUL-terminated string.
const char *roireg_version(void);

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next call into the library on the same thread.
const char *roireg_last_error(void);

// # Safety
// `dir` must be a NUL-terminated string and `out` a writable pointer.
enum RoiregStatus roireg_case_read(const char *dir, struct RoiregCase **out);

// # Safety
// `handle` must be NULL or a pointer from [`roireg_case_read`] not yet freed.
void roireg_case_free(struct RoiregCase *handle);

// # Safety
// `handle` must be a live case handle and `out` a writable pointer.
enum RoiregStatus roireg_case_num_masks(const struct RoiregCase *handle, size_t *out);

struct RoiregMatchConfig roireg_match_config_default(void);

// Matches the candidate ROIs of two cases. An empty pairing (no similarity
// above epsilon) is a success; check [`roireg_pairing_len`].
//
// # Safety
// `moving` and `fixed` must be live case handles, `config` NULL (defaults)
// or a valid config, and `out` a writable pointer.
enum RoiregStatus roireg_match(const struct RoiregCase *moving,
                               const struct RoiregCase *fixed,
                               const struct RoiregMatchConfig *config,
                               struct RoiregPairing **out);

// Reads `pairing.json` or a directory containing it.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum RoiregStatus roireg_pairing_read(const char *path, struct RoiregPairing **out);

// # Safety
// `pairing` must be a live pairing handle and `out` a writable pointer.
enum RoiregStatus roireg_pairing_len(const struct RoiregPairing *pairing, size_t *out);

// # Safety
// `pairing` must be a live pairing handle and `out` a writable pointer.
enum RoiregStatus roireg_pairing_get(const struct RoiregPairing *pairing,
                                     size_t index,
                                     struct RoiregPairInfo *out);

// Writes `pairing.json` and the paired mask files into `dir`.
//
// # Safety
// `pairing` must be a live pairing handle and `dir` a NUL-terminated string.
enum RoiregStatus roireg_pairing_write(const struct RoiregPairing *pairing, const char *dir);

// # Safety
// `pairing` must be NULL or a pairing handle not yet freed.
void roireg_pairing_free(struct RoiregPairing *pairing);

struct RoiregFitConfig roireg_fit_config_default(void);

// Fits a displacement field to the pairs. `final_loss`, when not NULL,
// receives the loss of the returned field.
//
// # Safety
// `pairing` must be a live pairing handle, `config` NULL (defaults) or a
// valid config, `out` a writable pointer and `final_loss` NULL or writable.
enum RoiregStatus roireg_fit_ddf(const struct RoiregPairing *pairing,
                                 const struct RoiregFitConfig *config,
                                 struct RoiregDdf **out,
                                 double *final_loss);

// Reads `ddf.json` and `ddf.raw` from `dir`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a writable pointer.
enum RoiregStatus roireg_ddf_read(const char *dir, struct RoiregDdf **out);

// Writes the number of axes to `ndim` and the extents, in axis order, to the
// first `ndim` entries of `dims` (which must hold 3).
//
// # Safety
// `ddf` must be a live field handle, `dims` point to 3 writable values and
// `ndim` be writable.
enum RoiregStatus roireg_ddf_dims(const struct RoiregDdf *ddf, size_t *dims, size_t *ndim);

// Copies the field, component-major in voxel units, into `buf`, which must
// hold `ndim * num_voxels` values.
//
// # Safety
// `ddf` must be a live field handle and `buf` point to `len` writable values.
enum RoiregStatus roireg_ddf_copy(const struct RoiregDdf *ddf, double *buf, size_t len);

// # Safety
// `ddf` must be a live field handle and `dir` a NUL-terminated string.
enum RoiregStatus roireg_ddf_write(const struct RoiregDdf *ddf, const char *dir);

// # Safety
// `ddf` must be NULL or a field handle not yet freed.
void roireg_ddf_free(struct RoiregDdf *ddf);

// Scores the pairing, warping the fixed masks through `ddf` unless it is NULL.
//
// # Safety
// `pairing` must be a live pairing handle, `ddf` NULL or a live field handle
// and `out` writable.
enum RoiregStatus roireg_evaluate(const struct RoiregPairing *pairing,
                                  const struct RoiregDdf *ddf,
                                  struct RoiregEvalSummary *out);

// Samples every voxel of the field into single-voxel pairs, rebuilds the
// field from them and reports the reconstruction error.
//
// # Safety
// `ddf` must be a live field handle and `out` writable.
enum RoiregStatus roireg_roundtrip(const struct RoiregDdf *ddf, struct RoiregRoundtripSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROIREG_H */
