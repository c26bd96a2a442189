/* C interface to the smile multi-view clustering library. */

#ifndef SMILE_H
#define SMILE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/* Opaque handles. Allocate through the smile_* constructors and release
 * with the matching smile_*_free; never dereference from C. */
typedef struct SmileDataset SmileDataset;
typedef struct SmileModel SmileModel;

/**
 * Status code of every fallible call. `Ok` is zero; everything else
 * classifies the failure and leaves a message for [`smile_last_error`].
 */
typedef enum SmileStatus {
  SMILE_STATUS_OK = 0,
  /**
   * A value was outside an operation's domain.
   */
  SMILE_STATUS_INVALID_ARGUMENT = 1,
  /**
   * A numeric computation left the finite range or degenerated.
   */
  SMILE_STATUS_NUMERIC_FAILURE = 2,
  /**
   * An internal consistency check failed.
   */
  SMILE_STATUS_INVARIANT_VIOLATED = 3,
  /**
   * A data file could not be parsed.
   */
  SMILE_STATUS_PARSE_ERROR = 4,
  /**
   * An I/O operation failed.
   */
  SMILE_STATUS_IO_ERROR = 5,
  /**
   * A configuration string was rejected.
   */
  SMILE_STATUS_CONFIG_ERROR = 6,
  /**
   * A required pointer argument was null.
   */
  SMILE_STATUS_NULL_POINTER = 7,
  /**
   * A string argument was not valid UTF-8.
   */
  SMILE_STATUS_INVALID_UTF8 = 8,
  /**
   * The library caught a panic; state may be inconsistent.
   */
  SMILE_STATUS_INTERNAL_PANIC = 9,
} SmileStatus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never freed.
 */
const char *smile_version(void);

/**
 * Copy the current thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap` bytes including the NUL) and return the full message
 * length in bytes. Call with a null `buf` or zero `cap` to query the
 * length. The message is only meaningful after a non-OK status.
 */
uintptr_t smile_last_error(char *buf,
                           uintptr_t cap);

/**
 * Generate a complete synthetic dataset: `n` instances in `k` categories,
 * latent dimension `d_latent`, one view per entry of
 * `view_dims[0..n_views]`, feature noise `noise`, all keyed by `seed`.
 *
 * # Safety
 * `view_dims` must point to `n_views` readable `size_t`s and `out` must be
 * a valid location to store the new handle.
 */
enum SmileStatus smile_dataset_generate(uintptr_t n,
                                        uintptr_t k,
                                        uintptr_t d_latent,
                                        const uintptr_t *view_dims,
                                        uintptr_t n_views,
                                        double noise,
                                        uint64_t seed,
                                        struct SmileDataset **out);

/**
 * Corrupt a complete dataset: a `zeta` fraction of instances loses
 * cross-view correspondence and a disjoint `eta` fraction loses a strict
 * subset of its views. Produces a new handle; the input is untouched.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a valid store location.
 */
enum SmileStatus smile_dataset_corrupt(const struct SmileDataset *ds,
                                       double eta,
                                       double zeta,
                                       uint64_t seed,
                                       struct SmileDataset **out);

/**
 * Write a dataset to a directory of CSV files (creating it if needed).
 *
 * # Safety
 * `ds` must be a live dataset handle and `dir` a NUL-terminated path.
 */
enum SmileStatus smile_dataset_save(const struct SmileDataset *ds,
                                    const char *dir);

/**
 * Load a dataset previously written by [`smile_dataset_save`].
 *
 * # Safety
 * `dir` must be a NUL-terminated path and `out` a valid store location.
 */
enum SmileStatus smile_dataset_load(const char *dir,
                                    struct SmileDataset **out);

/**
 * Basic shape and corruption rates of a dataset. Any output pointer may be
 * null to skip that field.
 *
 * # Safety
 * `ds` must be a live dataset handle; non-null outputs must be writable.
 */
enum SmileStatus smile_dataset_info(const struct SmileDataset *ds,
                                    uintptr_t *out_instances,
                                    uintptr_t *out_views,
                                    double *out_eta,
                                    double *out_zeta);

/**
 * Release a dataset handle. Null is a no-op.
 *
 * # Safety
 * `ds` must be null or a handle not freed before.
 */
void smile_dataset_free(struct SmileDataset *ds);

/**
 * Train a model on a dataset. `config_json` is an optional (nullable)
 * JSON object with the training configuration's flat keys, e.g.
 * `{"max_epochs": 150, "lambda_sil": 0.04}`; omitted keys take their
 * defaults, unknown keys are rejected.
 *
 * # Safety
 * `ds` must be a live dataset handle, `config_json` null or a
 * NUL-terminated string, and `out` a valid store location.
 */
enum SmileStatus smile_train(const struct SmileDataset *ds,
                             const char *config_json,
                             struct SmileModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle not freed before.
 */
void smile_model_free(struct SmileModel *model);

/**
 * Evaluate a trained model on a dataset: encode, recover missing and
 * unaligned samples, cluster, and score. Returns a JSON object (metric
 * keys appear only when the dataset carries the ground truth they need);
 * release it with [`smile_string_free`].
 *
 * # Safety
 * `model` and `ds` must be live handles and `out_json` a valid store
 * location.
 */
enum SmileStatus smile_evaluate(const struct SmileModel *model,
                                const struct SmileDataset *ds,
                                char **out_json);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void smile_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMILE_H */
