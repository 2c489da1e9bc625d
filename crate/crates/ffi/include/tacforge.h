#ifndef TACFORGE_H
#define TACFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of kinetic parameters in the forward model.
 */
#define TF_N_PARAMS 15

/**
 * Frames on the canonical acquisition grid.
 */
#define TF_CANONICAL_FRAMES 23

typedef enum TfStatus {
  TF_OK = 0,
  TF_NULL_POINTER = 1,
  TF_INVALID_ARGUMENT = 2,
  TF_BUFFER_TOO_SMALL = 3,
  TF_IO_ERROR = 4,
  TF_RUNTIME_ERROR = 5,
  TF_PANIC = 6,
} TfStatus;

/**
 * Trained LSTM; opaque to C.
 */
typedef struct TfModel TfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library.
 */
const char *tf_last_error_message(void);

/**
 * Trainable parameter count of an LSTM with `d` inputs and `h` hidden units.
 */
uint64_t tf_count_params(uintptr_t d, uintptr_t h);

/**
 * Dynamic time warping distance between `a[0..n]` and `b[0..m]`.
 *
 * # Safety
 * `a` and `b` must point to `n` and `m` readable doubles; `out` must be writable.
 */
enum TfStatus tf_dtw(const double *a, uintptr_t n, const double *b, uintptr_t m, double *out);

/**
 * Midpoint densification of one curve. Writes at most `capacity` samples to
 * `out_times`/`out_values` and the produced length to `out_len`. When the
 * buffers are too small, `out_len` receives the required length and
 * `TF_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * Input pointers must hold `n` doubles, output pointers `capacity` doubles.
 */
enum TfStatus tf_midpoint_interpolate(const double *times,
                                      const double *values,
                                      uintptr_t n,
                                      double cutoff_min,
                                      double *out_times,
                                      double *out_values,
                                      uintptr_t capacity,
                                      uintptr_t *out_len);

/**
 * Load a JSON checkpoint written by `tacforge train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum TfStatus tf_model_load(const char *path, struct TfModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`tf_model_load`] and not be used afterwards.
 */
void tf_model_free(struct TfModel *model);

/**
 * Hidden units of a loaded model, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t tf_model_hidden_units(const struct TfModel *model);

/**
 * Predict the MCIF for one normalized scan of `t` samples.
 *
 * # Safety
 * `idif`, `myo` and `out` must each hold `t` doubles.
 */
enum TfStatus tf_model_predict(const struct TfModel *model,
                               const double *idif,
                               const double *myo,
                               uintptr_t t,
                               double *out);

/**
 * Simulate one scan on the canonical grid. `params` holds the 15 model
 * parameters in the order A1, A2, A3, lam1, lam2, lam3, tau, K1, k2, k3,
 * k4, r_b, r_m, s_bm, s_mb. Each output holds `TF_CANONICAL_FRAMES` values;
 * noise is applied to IDIF and myocardium only.
 *
 * # Safety
 * `params` must hold 15 doubles and each output 23 doubles.
 */
enum TfStatus tf_simulate_scan(const double *params,
                               double noise,
                               uint64_t seed,
                               double *out_idif,
                               double *out_myo,
                               double *out_mcif);

/**
 * Fit the model to canonical-grid IDIF and myocardium curves within
 * `[lower, upper]` (15 values each, same order as [`tf_simulate_scan`];
 * equal bounds pin a parameter). Writes the fitted parameters, the fitted
 * MCIF (23 values) and the final cost.
 *
 * # Safety
 * Curve pointers must hold 23 doubles, bound and parameter pointers 15.
 */
enum TfStatus tf_fit_mcif(const double *idif,
                          const double *myo,
                          const double *lower,
                          const double *upper,
                          uintptr_t restarts,
                          uintptr_t max_iter,
                          uint64_t seed,
                          double *out_params,
                          double *out_mcif,
                          double *out_cost);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TACFORGE_H */
