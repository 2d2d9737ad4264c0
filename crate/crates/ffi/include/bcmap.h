#ifndef BCMAP_H
#define BCMAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BcmStatus {
  BCM_STATUS_OK = 0,
  BCM_STATUS_NULL_POINTER = 1,
  BCM_STATUS_INVALID_ARGUMENT = 2,
  BCM_STATUS_INVALID_GRID = 3,
  BCM_STATUS_CFL = 4,
  BCM_STATUS_UNSTABLE = 5,
  BCM_STATUS_SHAPE = 6,
  BCM_STATUS_LINALG = 7,
  BCM_STATUS_IO = 8,
  BCM_STATUS_FORMAT = 9,
  BCM_STATUS_PANIC = 10,
} BcmStatus;

typedef enum BcmMaskMode {
  BCM_MASK_MODE_SOURCES_AND_RECEIVERS = 0,
  BCM_MASK_MODE_RECEIVERS = 1,
  BCM_MASK_MODE_SOURCES = 2,
} BcmMaskMode;

typedef struct BcmGrid BcmGrid;

typedef struct BcmNd BcmNd;

typedef struct BcmRecon BcmRecon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bcm_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t bcm_last_error(char *buf, size_t len);

// Space-time grid with I intervals per side on [-1,1]² and final time `t`;
// the step is chosen from `c_max` to satisfy the CFL limit.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum BcmStatus bcm_grid_new(size_t i, double t, double c_max, struct BcmGrid **out);

// # Safety
// Output pointers may be null; `grid` must be a live handle.
enum BcmStatus bcm_grid_dims(const struct BcmGrid *grid,
                             size_t *i,
                             size_t *l,
                             size_t *lh,
                             double *dt);

// # Safety
// `grid` must be null or a handle from `bcm_grid_new`, freed once.
void bcm_grid_free(struct BcmGrid *grid);

// Assembles the ND map on `grid` from forward solves on the grid refined by
// `factor`. `speed` holds c at the (factor*I+1)² fine nodes, index i*(n)+j
// with x_i along the first index.
//
// # Safety
// `speed` must point to `n` doubles.
enum BcmStatus bcm_nd_assemble(const struct BcmGrid *grid,
                               const double *speed,
                               size_t n,
                               size_t factor,
                               struct BcmNd **out);

// Loads a clean ND kernel directory written by `bcm_nd_save` or the CLI.
//
// # Safety
// `path` must be a NUL-terminated string.
enum BcmStatus bcm_nd_load(const char *path, struct BcmNd **out);

// Writes the clean kernel; noise and masks are not stored.
//
// # Safety
// `path` must be a NUL-terminated string.
enum BcmStatus bcm_nd_save(const struct BcmNd *nd, const char *path);

// Matrix size; rows and columns are both 4I(L+1).
//
// # Safety
// Output pointers may be null.
enum BcmStatus bcm_nd_dims(const struct BcmNd *nd, size_t *rows, size_t *cols);

// # Safety
// `value` must be writable.
enum BcmStatus bcm_nd_entry(const struct BcmNd *nd, size_t row, size_t col, double *value);

// New handle with Gaussian noise of relative `level` (times the clean RMS).
//
// # Safety
// `nd` must be a live handle.
enum BcmStatus bcm_nd_with_gaussian_noise(const struct BcmNd *nd,
                                          double level,
                                          uint64_t seed,
                                          struct BcmNd **out);

// New handle with `level` added to every entry.
//
// # Safety
// `nd` must be a live handle.
enum BcmStatus bcm_nd_with_constant_noise(const struct BcmNd *nd, double level, struct BcmNd **out);

// New handle with sides removed. `sides` is a bit set: 1 x-, 2 x+, 4 y-, 8 y+.
//
// # Safety
// `nd` must be a live handle.
enum BcmStatus bcm_nd_with_mask(const struct BcmNd *nd,
                                uint8_t sides,
                                enum BcmMaskMode mode,
                                struct BcmNd **out);

// # Safety
// `nd` must be null or a handle from this library, freed once.
void bcm_nd_free(struct BcmNd *nd);

// Runs the reconstruction with default settings and the given relative
// Tikhonov weight. `truth` (c at the (I+1)² coarse nodes) may be null.
//
// # Safety
// `truth` must be null or point to `n_truth` doubles.
enum BcmStatus bcm_reconstruct(const struct BcmNd *nd,
                               double alpha_rel,
                               const double *truth,
                               size_t n_truth,
                               struct BcmRecon **out);

// Copies the recovered speed ((I+1)² values) into `buf`. `written` receives
// the required length even when `len` is too small.
//
// # Safety
// `buf` must point to `len` writable doubles; `written` may be null.
enum BcmStatus bcm_recon_speed(const struct BcmRecon *recon,
                               double *buf,
                               size_t len,
                               size_t *written);

// Relative L2 errors in percent; NaN where no truth was given.
//
// # Safety
// Output pointers may be null.
enum BcmStatus bcm_recon_errors(const struct BcmRecon *recon,
                                double *vs_truth,
                                double *vs_projection);

// # Safety
// `recon` must be null or a handle from this library, freed once.
void bcm_recon_free(struct BcmRecon *recon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BCMAP_H */
