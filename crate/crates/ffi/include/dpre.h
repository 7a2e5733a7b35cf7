#ifndef DPRE_H
#define DPRE_H

#include <stddef.h>
#include <stdint.h>

typedef enum DpreStatus {
  DPRE_STATUS_OK = 0,
  DPRE_STATUS_NULL_POINTER = 1,
  DPRE_STATUS_INVALID_ARGUMENT = 2,
  DPRE_STATUS_RESOURCE_CAP = 3,
  DPRE_STATUS_PRECONDITION = 4,
  DPRE_STATUS_NUMERICAL = 5,
  DPRE_STATUS_IO = 6,
  DPRE_STATUS_PANIC = 7,
} DpreStatus;

/**
 * Environment realization handle.
 */
typedef struct DpreField DpreField;

/**
 * Disorder law handle.
 */
typedef struct DpreModel DpreModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dpre_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dpre_version(void);

/**
 * Worker threads for Monte Carlo batches (0 = one per core).
 */
void dpre_set_workers(size_t n);

/**
 * Creates a model from a JSON fragment such as `{"family":"gaussian-unit"}`.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum DpreStatus dpre_model_from_json(const char *json, struct DpreModel **out);

/**
 * Standard Gaussian disorder. Never fails; free with [`dpre_model_free`].
 */
struct DpreModel *dpre_model_gaussian(void);

/**
 * ±1 disorder. Never fails; free with [`dpre_model_free`].
 */
struct DpreModel *dpre_model_rademacher(void);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dpre_model_free(struct DpreModel *model);

/**
 * λ(β) = log Q[e^{βη}].
 *
 * # Safety
 * Pointers must be valid.
 */
enum DpreStatus dpre_model_cumulant(const struct DpreModel *model, double beta, double *out);

/**
 * Exact Q[W_n²(β)] for the d-dimensional walk.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DpreStatus dpre_second_moment_exact(const struct DpreModel *model,
                                         double beta,
                                         size_t n,
                                         size_t d,
                                         double *out);

/**
 * An environment realization on times 1..=t_max and sites with
 * |x_k| ≤ radius.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DpreStatus dpre_field_new(const struct DpreModel *model,
                               uint64_t seed,
                               size_t d,
                               uint32_t t_max,
                               int32_t radius,
                               struct DpreField **out);

/**
 * # Safety
 * `field` must come from this library and not be used afterwards.
 */
void dpre_field_free(struct DpreField *field);

/**
 * log W_n(β) for the walk started at the origin.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DpreStatus dpre_log_partition(const struct DpreField *field,
                                   double beta,
                                   size_t n,
                                   double *out);

/**
 * Q̂[log W_n]/n at the largest horizon of `schedule` over `m` environments.
 *
 * # Safety
 * `schedule` must point to `len` values; output pointers must be valid.
 */
enum DpreStatus dpre_free_energy_lower(const struct DpreModel *model,
                                       double beta,
                                       size_t d,
                                       const size_t *schedule,
                                       size_t len,
                                       size_t m,
                                       uint64_t seed,
                                       double *p_lower,
                                       double *se);

/**
 * Writes `m` samples of A^{q,N}_0 (γ_N = γ̂/√log N) into `out`.
 *
 * # Safety
 * `out` must have room for `m` values.
 */
enum DpreStatus dpre_chaos_samples(const struct DpreModel *model,
                                   size_t q,
                                   double gamma_hat,
                                   size_t n,
                                   size_t d,
                                   size_t m,
                                   uint64_t seed,
                                   double *out);

/**
 * Exact Q[(A^{q,N})²].
 *
 * # Safety
 * Pointers must be valid.
 */
enum DpreStatus dpre_chaos_second_moment_exact(const struct DpreModel *model,
                                               size_t q,
                                               double gamma_hat,
                                               size_t n,
                                               size_t d,
                                               double *out);

/**
 * β = C1·(log N)^{−(q−1)/(2q)}.
 *
 * # Safety
 * `out` must be valid.
 */
enum DpreStatus dpre_beta_of_n(double c1, size_t q, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPRE_H */
