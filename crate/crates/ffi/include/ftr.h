#ifndef FTR_H
#define FTR_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FtrStatus {
  FTR_STATUS_OK = 0,
  FTR_STATUS_NULL_POINTER = 1,
  FTR_STATUS_DOMAIN = 2,
  FTR_STATUS_DIVERGENCE = 3,
  FTR_STATUS_NO_SOLUTION = 4,
  FTR_STATUS_SOLVER = 5,
  FTR_STATUS_PRECONDITION = 6,
  FTR_STATUS_GEOMETRY = 7,
  FTR_STATUS_FIT = 8,
  FTR_STATUS_CALIBRATION = 9,
  FTR_STATUS_CONFIG = 10,
  FTR_STATUS_IO = 11,
  FTR_STATUS_PANIC = 12,
} FtrStatus;

/**
 * Opaque flux-tunable resonator model.
 */
typedef struct FtrDevice FtrDevice;

/**
 * Opaque complex transmission trace.
 */
typedef struct FtrTrace FtrTrace;

/**
 * SQUID state on the zero-flux-connected branch.
 */
typedef struct FtrScreening {
  /**
   * Loop flux (Wb).
   */
  double phi_s;
  /**
   * Circulating current (A).
   */
  double i_circ;
  /**
   * SQUID inductance (H); infinite where it diverges.
   */
  double ls;
  int64_t winding;
  bool multivalued;
} FtrScreening;

typedef struct FtrLinearFit {
  double f_r;
  double q_l;
  double q_c_abs;
  double q_c_eff;
  double q_i;
  double phi;
  double rms_residual;
  bool overcoupled;
} FtrLinearFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated to `len`)
 * into `buf` and returns the full message length excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t ftr_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ftr_version(void);

/**
 * Creates a device from SQUID (I0, alpha, Lg) and resonator (length, modal L_r, C_r) values.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum FtrStatus ftr_device_new(double i0,
                              double alpha,
                              double lg,
                              double length,
                              double l_r,
                              double c_r,
                              double scaling_a,
                              struct FtrDevice **out);

/**
 * Releases a device; null is ignored.
 *
 * # Safety
 * `dev` must come from `ftr_device_new` and not be used afterwards.
 */
void ftr_device_free(struct FtrDevice *dev);

/**
 * # Safety
 * `dev` and `out` must be valid.
 */
enum FtrStatus ftr_device_beta_l(const struct FtrDevice *dev, double *out);

/**
 * Bare resonator angular frequency omega0 (rad/s).
 *
 * # Safety
 * `dev` and `out` must be valid.
 */
enum FtrStatus ftr_device_omega0(const struct FtrDevice *dev, double *out);

/**
 * Resonance angular frequency (rad/s) at applied flux `phi_e` (Wb).
 * `exact` selects the transcendental frequency equation.
 *
 * # Safety
 * `dev` and `out` must be valid.
 */
enum FtrStatus ftr_device_omega(const struct FtrDevice *dev, double phi_e, bool exact, double *out);

/**
 * Evaluates `n` frequencies; stops at the first failing point and reports it.
 *
 * # Safety
 * `phi_e` and `omega_out` must be valid for `n` elements.
 */
enum FtrStatus ftr_device_tuning(const struct FtrDevice *dev,
                                 const double *phi_e,
                                 size_t n,
                                 bool exact,
                                 double *omega_out);

/**
 * # Safety
 * `out` must be valid.
 */
enum FtrStatus ftr_squid_solve(double i0,
                               double alpha,
                               double lg,
                               double phi_e,
                               struct FtrScreening *out);

/**
 * Mutual inductance (H) of two coaxial squares of sides `side_a` (z = 0) and `side_b` (z = h).
 *
 * # Safety
 * `out` must be valid.
 */
enum FtrStatus ftr_mutual_squares(double side_a,
                                  double side_b,
                                  double h,
                                  double rel_tol,
                                  double *out);

/**
 * Mutual inductance (H) of two closed polylines given as xyz triples (m).
 *
 * # Safety
 * `a` must hold `3 * na` values and `b` `3 * nb` values; `out` must be valid.
 */
enum FtrStatus ftr_mutual_polylines(const double *a,
                                    size_t na,
                                    const double *b,
                                    size_t nb,
                                    double rel_tol,
                                    double *out);

/**
 * Self-inductance (H) of a square coil of side `side` and wire width `width`.
 *
 * # Safety
 * `out` must be valid.
 */
enum FtrStatus ftr_square_coil_inductance(double side, double width, double *out);

/**
 * Steady-state photon numbers of the driven Kerr resonator (up to 3, ascending).
 * `k` is the Kerr coefficient in the cubic's own sign convention.
 *
 * # Safety
 * `roots` must hold 3 values, `stable` 3 flags, `count` one value.
 */
enum FtrStatus ftr_duffing_roots(double delta,
                                 double kappa,
                                 double kappa_c,
                                 double k,
                                 double drive,
                                 double *roots,
                                 bool *stable,
                                 size_t *count);

/**
 * # Safety
 * `freqs`, `re` and `im` must hold `n` values; `out` must be valid.
 */
enum FtrStatus ftr_trace_new(const double *freqs,
                             const double *re,
                             const double *im,
                             size_t n,
                             struct FtrTrace **out);

/**
 * # Safety
 * `t` must come from `ftr_trace_new` and not be used afterwards.
 */
void ftr_trace_free(struct FtrTrace *t);

/**
 * Circle fit of a notch resonance, optionally after edge-based background removal.
 *
 * # Safety
 * `t` and `out` must be valid.
 */
enum FtrStatus ftr_fit_linear(const struct FtrTrace *t, bool background, struct FtrLinearFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FTR_H */
