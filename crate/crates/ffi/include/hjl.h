#ifndef HJL_H
#define HJL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HjlStatus {
  HJL_STATUS_OK = 0,
  HJL_STATUS_NULL_POINTER = 1,
  HJL_STATUS_CONSTRAINT_VIOLATION = 2,
  HJL_STATUS_COINCIDENT_POINTS = 3,
  HJL_STATUS_ENVELOPE_SEARCH_FAILURE = 4,
  HJL_STATUS_TOLERANCE_NOT_MET = 5,
  HJL_STATUS_PARAMETER_OUT_OF_RANGE = 6,
  HJL_STATUS_NON_INTEGRABLE_PROFILE = 7,
  HJL_STATUS_EMPTY_FUNCTION = 8,
  HJL_STATUS_DEGENERATE_SAMPLE = 9,
  HJL_STATUS_DIVERGENT_INTEGRAND = 10,
  HJL_STATUS_USAGE = 11,
  HJL_STATUS_IO = 12,
  HJL_STATUS_PANIC = 13,
} HjlStatus;

/**
 * Kernel parameters `(alpha, d, beta)`.
 */
typedef struct HjlKernel HjlKernel;

/**
 * Truncated jump simulator bound to one kernel.
 */
typedef struct HjlSimulator HjlSimulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hjl_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *hjl_version(void);

/**
 * Creates a kernel. `beta` points to four doubles.
 *
 * # Safety
 * `beta` must point to four readable doubles and `out` must be writable.
 */
enum HjlStatus hjl_kernel_new(double alpha,
                              uintptr_t d,
                              const double *beta,
                              struct HjlKernel **out_kernel);

/**
 * Releases a kernel. Null is ignored.
 *
 * # Safety
 * `k` must come from [`hjl_kernel_new`] and not be used afterwards.
 */
void hjl_kernel_free(struct HjlKernel *k);

/**
 * Dimension of the kernel's half-space.
 *
 * # Safety
 * `k` must be a live kernel handle.
 */
uintptr_t hjl_kernel_dim(const struct HjlKernel *k);

/**
 * Boundary function `B(x, y)` for points of length `d`.
 *
 * # Safety
 * `x` and `y` must point to `d` doubles; `value` must be writable.
 */
enum HjlStatus hjl_kernel_model_b(const struct HjlKernel *k,
                                  const double *x,
                                  const double *y,
                                  double *value);

/**
 * Jump kernel `J(x, y)`.
 *
 * # Safety
 * As for [`hjl_kernel_model_b`].
 */
enum HjlStatus hjl_kernel_jump(const struct HjlKernel *k,
                               const double *x,
                               const double *y,
                               double *value);

/**
 * Upper bound `M_B` of `B`.
 *
 * # Safety
 * `k` must be live and `value` writable.
 */
enum HjlStatus hjl_kernel_envelope(const struct HjlKernel *k, double *value);

/**
 * Constant `C(alpha, p)` with `L g_p = C g_{p - alpha}`.
 *
 * # Safety
 * `k` must be live and `value` writable.
 */
enum HjlStatus hjl_constant_c(const struct HjlKernel *k, double p, double *value);

/**
 * Principal-value operator applied to `x_d^p` at `x`.
 *
 * # Safety
 * `x` must point to `d` doubles and `value` must be writable.
 */
enum HjlStatus hjl_pv_apply_power(const struct HjlKernel *k,
                                  double p,
                                  const double *x,
                                  double *value);

/**
 * Certified Hardy constant for `d = 1` and the exponent that attains it.
 *
 * # Safety
 * `k` must be live; `bound` and `p_star` writable.
 */
enum HjlStatus hjl_hardy_bound(const struct HjlKernel *k, double *bound, double *p_star);

/**
 * Creates a simulator with truncation fraction `delta`, absorption height
 * `eta_abs` and base seed `seed`; other settings take their defaults.
 *
 * # Safety
 * `k` must be live and `out_sim` writable.
 */
enum HjlStatus hjl_simulator_new(const struct HjlKernel *k,
                                 double delta,
                                 double eta_abs,
                                 uint64_t seed,
                                 struct HjlSimulator **out_sim);

/**
 * Releases a simulator. Null is ignored.
 *
 * # Safety
 * `s` must come from [`hjl_simulator_new`] and not be used afterwards.
 */
void hjl_simulator_free(struct HjlSimulator *s);

/**
 * Mean exit time from the strip `U(r)` starting at `x0`, with its
 * standard error.
 *
 * # Safety
 * `x0` must point to `d` doubles; `mean` and `std_error` writable.
 */
enum HjlStatus hjl_simulator_exit_time(const struct HjlSimulator *s,
                                       const double *x0,
                                       double r,
                                       uint64_t n_paths,
                                       double *mean,
                                       double *std_error);

/**
 * Fraction of half-space paths from `x0` that end absorbed at the
 * boundary.
 *
 * # Safety
 * `x0` must point to `d` doubles; `fraction` writable.
 */
enum HjlStatus hjl_simulator_absorbed_fraction(const struct HjlSimulator *s,
                                               const double *x0,
                                               uint64_t n_paths,
                                               double *fraction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJL_H */
