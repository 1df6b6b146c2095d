#ifndef BITSCALE_H
#define BITSCALE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Quantization granularity tag for [`bs_fake_quantize`].
 */
#define BS_PER_TENSOR 0

#define BS_PER_ROW 1

#define BS_GROUP 2

typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  BS_STATUS_SHAPE = 3,
  BS_STATUS_NOT_POSITIVE_DEFINITE = 4,
  BS_STATUS_NO_VALID_FIT = 5,
  BS_STATUS_PANIC = 6,
  BS_STATUS_OTHER = 7,
} BsStatus;

/**
 * Opaque damped Hessian estimate.
 */
typedef struct BsHessian BsHessian;

/**
 * Opaque row-major f64 matrix.
 */
typedef struct BsMatrix BsMatrix;

typedef struct BsPowerLaw {
  double a;
  double b;
  double c;
  double rmse;
} BsPowerLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bs_version(void);

/**
 * Message of the last failed call on this thread, or null.
 *
 * The pointer stays valid until the next bitscale call on the same thread.
 */
const char *bs_last_error_message(void);

/**
 * Copies `rows*cols` row-major values into a new matrix.
 *
 * # Safety
 * `data` must point to `rows*cols` readable doubles and `out` must be
 * writable. Free the result with [`bs_matrix_free`].
 */
enum BsStatus bs_matrix_new(const double *data, size_t rows, size_t cols, struct BsMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void bs_matrix_free(struct BsMatrix *m);

/**
 * # Safety
 * `m` must be a live handle or null (returns 0).
 */
size_t bs_matrix_rows(const struct BsMatrix *m);

/**
 * # Safety
 * `m` must be a live handle or null (returns 0).
 */
size_t bs_matrix_cols(const struct BsMatrix *m);

/**
 * Copies the row-major values into `dst`, which holds `len` doubles.
 *
 * # Safety
 * `m` must be a live handle and `dst` must be writable for `len` doubles.
 */
enum BsStatus bs_matrix_copy_data(const struct BsMatrix *m, double *dst, size_t len);

/**
 * Integer fake quantization calibrated on `x` itself with range
 * shrink factors `gamma` and `beta`.
 *
 * # Safety
 * `x` must be a live handle and `out` writable.
 */
enum BsStatus bs_fake_quantize(const struct BsMatrix *x,
                               uint32_t bits,
                               uint32_t granularity_kind,
                               size_t group_size,
                               double gamma,
                               double beta,
                               struct BsMatrix **out);

/**
 * Rounds `x/scale` onto the ExMy float grid and rescales.
 *
 * # Safety
 * `x` must be a live handle and `out` writable.
 */
enum BsStatus bs_fp_quantize(const struct BsMatrix *x,
                             uint32_t exp_bits,
                             uint32_t man_bits,
                             double scale,
                             struct BsMatrix **out);

/**
 * Hessian `2XᵀX/n` of calibration inputs with relative diagonal damping.
 *
 * # Safety
 * `calib` must be a live handle and `out` writable. Free the result with
 * [`bs_hessian_free`].
 */
enum BsStatus bs_hessian_new(const struct BsMatrix *calib, double damping, struct BsHessian **out);

/**
 * # Safety
 * `h` must be null or a handle from this library not yet freed.
 */
void bs_hessian_free(struct BsHessian *h);

/**
 * GPTQ with per-row integer grids. Writes the quantized weights to `out`
 * and, when `proxy_loss` is non-null, the Hessian-weighted error.
 *
 * # Safety
 * Handles must be live; `out` must be writable; `proxy_loss` may be null.
 */
enum BsStatus bs_gptq(const struct BsMatrix *w,
                      const struct BsHessian *h,
                      uint32_t bits,
                      size_t block_size,
                      bool act_order,
                      struct BsMatrix **out,
                      double *proxy_loss);

/**
 * Top-k KL divergence between two probability vectors of length `len`.
 *
 * # Safety
 * `p_teacher` and `p_student` must hold `len` doubles; `out` writable.
 */
enum BsStatus bs_topkld(const double *p_teacher,
                        const double *p_student,
                        size_t len,
                        size_t k,
                        double *out);

/**
 * Fits `y = a·x^(−b) + c` to `n` points.
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` writable.
 */
enum BsStatus bs_fit_power_law(const double *x, const double *y, size_t n, struct BsPowerLaw *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BITSCALE_H */
