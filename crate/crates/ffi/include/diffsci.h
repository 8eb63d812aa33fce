#ifndef DIFFSCI_H
#define DIFFSCI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the numbering matches the command-line exit codes.
 */
typedef enum DsStatus {
  DS_STATUS_OK = 0,
  /**
   * Invalid argument, parameter or shape.
   */
  DS_STATUS_INVALID = 2,
  /**
   * File access or file format.
   */
  DS_STATUS_IO = 3,
  /**
   * Non-finite values or degenerate pixels.
   */
  DS_STATUS_NUMERICAL = 4,
  /**
   * The prior failed.
   */
  DS_STATUS_PRIOR = 5,
  DS_STATUS_NULL_POINTER = 6,
  DS_STATUS_PANIC = 7,
} DsStatus;

typedef enum DsPlanKind {
  DS_PLAN_KIND_PARTITIONED = 0,
  DS_PLAN_KIND_SLIDING = 1,
  DS_PLAN_KIND_WAVELENGTH_MATCHED = 2,
} DsPlanKind;

typedef enum DsPriorKind {
  DS_PRIOR_KIND_IDENTITY = 0,
  DS_PRIOR_KIND_GAUSSIAN_SHRINK = 1,
  /**
   * Requires the ground-truth cube.
   */
  DS_PRIOR_KIND_ORACLE = 2,
} DsPriorKind;

typedef struct DsCube DsCube;

typedef struct DsMask DsMask;

typedef struct DsMeasurement DsMeasurement;

typedef struct DsOperator DsOperator;

/**
 * Solver settings. Start from [`ds_solver_config_default`].
 */
typedef struct DsSolverConfig {
  double lambda;
  double zeta;
  double guidance_scale;
  uint32_t t_start;
  uint32_t step_count;
  uint64_t seed;
  double sigma_n;
  enum DsPlanKind plan;
  /**
   * Zero-based anchor bands; negative picks the default pair.
   */
  int32_t anchor_a;
  int32_t anchor_b;
  double cutoff_nm;
  bool accelerate;
  bool warm_start;
  bool normalize;
} DsSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *ds_last_error(void);

/**
 * Library version as a static string.
 */
const char *ds_version(void);

/**
 * New cube. `data` may be null for a zero cube; otherwise it holds
 * `height * width * bands` band-major values.
 */
enum DsStatus ds_cube_new(size_t height,
                          size_t width,
                          size_t bands,
                          const double *wavelengths,
                          const double *data,
                          struct DsCube **out);

void ds_cube_free(struct DsCube *cube);

/**
 * Writes the dimensions of `cube`; any output pointer may be null.
 */
enum DsStatus ds_cube_dims(const struct DsCube *cube, size_t *height, size_t *width, size_t *bands);

/**
 * Band-major values, valid while the cube lives. Null for a null cube.
 */
const double *ds_cube_data(const struct DsCube *cube);

/**
 * `bands` wavelengths in nanometres, valid while the cube lives.
 */
const double *ds_cube_wavelengths(const struct DsCube *cube);

enum DsStatus ds_cube_read(const char *path_utf8, struct DsCube **out);

enum DsStatus ds_cube_write(const struct DsCube *cube, const char *path_utf8);

/**
 * Mask of `height * width` values in `[0, 1]`, row-major.
 */
enum DsStatus ds_mask_new(size_t height, size_t width, const double *data, struct DsMask **out);

/**
 * Seeded random binary mask.
 */
enum DsStatus ds_mask_random(size_t height, size_t width, uint64_t seed, struct DsMask **out);

void ds_mask_free(struct DsMask *mask);

/**
 * Measurement of `height * width` row-major values, where `width` is the
 * detector width.
 */
enum DsStatus ds_measurement_new(size_t height,
                                 size_t width,
                                 size_t shift,
                                 const double *data,
                                 double sigma_n,
                                 struct DsMeasurement **out);

void ds_measurement_free(struct DsMeasurement *y);

enum DsStatus ds_measurement_dims(const struct DsMeasurement *y, size_t *height, size_t *width);

/**
 * Row-major values, valid while the measurement lives.
 */
const double *ds_measurement_data(const struct DsMeasurement *y);

enum DsStatus ds_measurement_read(const char *path_utf8, struct DsMeasurement **out);

enum DsStatus ds_measurement_write(const struct DsMeasurement *y, const char *path_utf8);

/**
 * Operator for `bands` bands dispersed by `shift` columns per band. The
 * mask is copied; the caller keeps ownership of `mask`.
 */
enum DsStatus ds_operator_new(const struct DsMask *mask,
                              size_t shift,
                              size_t bands,
                              struct DsOperator **out);

void ds_operator_free(struct DsOperator *op);

/**
 * Detector width `W + shift * (bands - 1)`; 0 for a null operator.
 */
size_t ds_operator_measurement_width(const struct DsOperator *op);

enum DsStatus ds_operator_apply(const struct DsOperator *op,
                                const struct DsCube *cube,
                                struct DsMeasurement **out);

/**
 * Adjoint; `wavelengths` holds one value per band.
 */
enum DsStatus ds_operator_adjoint(const struct DsOperator *op,
                                  const struct DsMeasurement *y,
                                  const double *wavelengths,
                                  struct DsCube **out);

/**
 * Forward model plus seeded Gaussian noise of standard deviation `sigma_n`.
 */
enum DsStatus ds_operator_simulate(const struct DsOperator *op,
                                   const struct DsCube *cube,
                                   double sigma_n,
                                   uint64_t seed,
                                   struct DsMeasurement **out);

struct DsSolverConfig ds_solver_config_default(void);

/**
 * Reconstructs a cube from `y` with a built-in prior and the default
 * diffusion schedule. `truth` is required for the oracle prior and
 * ignored otherwise; `wavelengths` holds one value per band.
 */
enum DsStatus ds_reconstruct(const struct DsOperator *op,
                             const struct DsMeasurement *y,
                             const double *wavelengths,
                             const struct DsSolverConfig *config,
                             enum DsPriorKind prior,
                             double prior_strength,
                             const struct DsCube *truth,
                             struct DsCube **out);

/**
 * Mean per-band PSNR and SSIM of `recon` against `reference`.
 */
enum DsStatus ds_evaluate(const struct DsCube *recon,
                          const struct DsCube *reference,
                          double peak,
                          double *mean_psnr,
                          double *mean_ssim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFSCI_H */
