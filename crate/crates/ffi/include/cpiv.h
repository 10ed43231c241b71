#ifndef CPIV_H
#define CPIV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

enum CpivStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  CPIV_STATUS_OK = 0,
  CPIV_STATUS_NULL_POINTER = 1,
  CPIV_STATUS_INVALID_UTF8 = 2,
  CPIV_STATUS_CONFIG = 3,
  CPIV_STATUS_DOMAIN = 4,
  CPIV_STATUS_ESTIMATION = 5,
  CPIV_STATUS_IO = 6,
  CPIV_STATUS_BUFFER_TOO_SMALL = 7,
  CPIV_STATUS_PANIC = 99,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum CpivStatus CpivStatus;
#else
typedef int32_t CpivStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Simulated or loaded panel.
 */
typedef struct CpivDataset CpivDataset;

/**
 * Estimation result.
 */
typedef struct CpivEstimate CpivEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpiv_version(void);

/**
 * Copy of the last error message on this thread, or NULL if none.
 * Free with `cpiv_string_free`.
 */
char *cpiv_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void cpiv_string_free(char *s);

/**
 * Simulates a panel from a JSON panel config.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
CpivStatus cpiv_dataset_simulate(const char *config_json, struct CpivDataset **out);

/**
 * Loads a dataset directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
CpivStatus cpiv_dataset_read(const char *dir, struct CpivDataset **out);

/**
 * Writes a dataset directory.
 *
 * # Safety
 * `ds` must be a live handle and `dir` a NUL-terminated string.
 */
CpivStatus cpiv_dataset_write(const struct CpivDataset *ds, const char *dir);

/**
 * Panel dimensions. Any output pointer may be NULL.
 *
 * # Safety
 * `ds` must be a live handle; non-NULL outputs must be valid.
 */
CpivStatus cpiv_dataset_dims(const struct CpivDataset *ds,
                             uintptr_t *n_individuals,
                             uintptr_t *n_periods,
                             uintptr_t *n_regressors);

/**
 * Copies the `N x T` outcome matrix (row-major, NaN for absent cells)
 * into `buf`, which must hold at least `N * T` values.
 *
 * # Safety
 * `ds` must be a live handle and `buf` valid for `len` writes.
 */
CpivStatus cpiv_dataset_outcomes(const struct CpivDataset *ds, double *buf, uintptr_t len);

/**
 * Share of censored cells.
 *
 * # Safety
 * `ds` must be a live handle and `out` valid.
 */
CpivStatus cpiv_dataset_censoring_rate(const struct CpivDataset *ds, double *out);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void cpiv_dataset_free(struct CpivDataset *ds);

/**
 * Estimates with a JSON estimator config; NULL selects the defaults for the
 * dataset's variant.
 *
 * # Safety
 * `ds` must be a live handle, `config_json` NULL or NUL-terminated, and
 * `out` valid.
 */
CpivStatus cpiv_estimate(const struct CpivDataset *ds,
                         const char *config_json,
                         struct CpivEstimate **out);

/**
 * Number of estimated parameters, or 0 for a NULL handle.
 *
 * # Safety
 * `est` must be NULL or a live handle.
 */
uintptr_t cpiv_estimate_n_params(const struct CpivEstimate *est);

/**
 * Copies estimates and standard errors; either buffer may be NULL.
 *
 * # Safety
 * `est` must be a live handle; non-NULL buffers must hold `len` values.
 */
CpivStatus cpiv_estimate_values(const struct CpivEstimate *est,
                                double *estimates,
                                double *std_errors,
                                uintptr_t len);

/**
 * Name of parameter `index`, or NULL when out of range. Free with
 * `cpiv_string_free`.
 *
 * # Safety
 * `est` must be NULL or a live handle.
 */
char *cpiv_estimate_param_name(const struct CpivEstimate *est, uintptr_t index);

/**
 * Full result as JSON. Free with `cpiv_string_free`.
 *
 * # Safety
 * `est` must be NULL or a live handle.
 */
char *cpiv_estimate_to_json(const struct CpivEstimate *est);

/**
 * # Safety
 * `est` must be NULL or a handle not yet freed.
 */
void cpiv_estimate_free(struct CpivEstimate *est);

/**
 * `E[U1^k U2^m | U1 > 0, U2 > 0]` by adaptive quadrature.
 *
 * # Safety
 * `out` must be valid.
 */
CpivStatus cpiv_truncated_moment(double mu1,
                                 double mu2,
                                 double sigma1_sq,
                                 double sigma2_sq,
                                 double sigma12,
                                 uint32_t k,
                                 uint32_t m,
                                 double tol,
                                 double *out);

/**
 * Residual of the quadrant moment identity at order `(k, m)`.
 *
 * # Safety
 * `out` must be valid.
 */
CpivStatus cpiv_identity_residual(double mu1,
                                  double mu2,
                                  double sigma1_sq,
                                  double sigma2_sq,
                                  double sigma12,
                                  uint32_t k,
                                  uint32_t m,
                                  double tol,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPIV_H */
