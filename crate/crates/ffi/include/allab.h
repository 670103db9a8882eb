#ifndef ALLAB_H
#define ALLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AllabStatus {
  ALLAB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ALLAB_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  ALLAB_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration could not be parsed or failed validation.
   */
  ALLAB_STATUS_CONFIG_ERROR = 3,
  /**
   * Training, acquisition or I/O failed.
   */
  ALLAB_STATUS_RUNTIME_ERROR = 4,
  /**
   * An index argument was out of range.
   */
  ALLAB_STATUS_OUT_OF_RANGE = 5,
  /**
   * A bug: the library panicked. The handle involved should be discarded.
   */
  ALLAB_STATUS_PANIC = 6,
} AllabStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct AllabConfig AllabConfig;

/**
 * A trained classifier loaded from a checkpoint.
 */
typedef struct AllabModel AllabModel;

/**
 * Results of a finished experiment.
 */
typedef struct AllabResult AllabResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the library
 * and valid until the next failing call on the same thread.
 */
const char *allab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *allab_version(void);

/**
 * Reads and validates a JSON config file. Relative dataset paths resolve
 * against the file's directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AllabStatus allab_config_load(const char *path, struct AllabConfig **out);

/**
 * Parses and validates a JSON config held in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AllabStatus allab_config_parse(const char *json, struct AllabConfig **out);

/**
 * Overrides the base seed.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum AllabStatus allab_config_set_seed(struct AllabConfig *cfg, uint64_t seed);

/**
 * Overrides the number of trials (must be at least 1).
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum AllabStatus allab_config_set_trials(struct AllabConfig *cfg, size_t trials);

/**
 * SHA-256 of the canonical config, as 64 hex characters plus NUL written to `buf`
 * (which must hold at least 65 bytes).
 *
 * # Safety
 * `cfg` must be a live handle and `buf` valid for `len` bytes.
 */
enum AllabStatus allab_config_hash(const struct AllabConfig *cfg, char *buf, size_t len);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void allab_config_free(struct AllabConfig *cfg);

/**
 * Runs every trial of the experiment. `jobs == 0` uses all cores.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum AllabStatus allab_run(const struct AllabConfig *cfg, size_t jobs, struct AllabResult **out);

/**
 * Number of cycle records.
 *
 * # Safety
 * `res` must be a live handle and `out` a valid pointer.
 */
enum AllabStatus allab_result_num_cycles(const struct AllabResult *res, size_t *out);

/**
 * Labeled count, mean accuracy and sample std of cycle `cycle`. Any output
 * pointer may be null.
 *
 * # Safety
 * `res` must be a live handle; non-null outputs must be valid.
 */
enum AllabStatus allab_result_cycle(const struct AllabResult *res,
                                    size_t cycle,
                                    size_t *labeled,
                                    double *mean,
                                    double *std);

/**
 * Number of trials that completed without error.
 *
 * # Safety
 * `res` must be a live handle and `out` a valid pointer.
 */
enum AllabStatus allab_result_completed_trials(const struct AllabResult *res, size_t *out);

/**
 * Writes results CSV, selection and score logs, checkpoints and manifest to `dir`.
 *
 * # Safety
 * `res` must be a live handle and `dir` a NUL-terminated string.
 */
enum AllabStatus allab_result_write(const struct AllabResult *res, const char *dir);

/**
 * # Safety
 * `res` must be null or a handle not yet freed.
 */
void allab_result_free(struct AllabResult *res);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AllabStatus allab_model_load(const char *path, struct AllabModel **out);

/**
 * Input width and number of classes of a model. Either pointer may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be valid.
 */
enum AllabStatus allab_model_shape(const struct AllabModel *model,
                                   size_t *dim,
                                   size_t *num_classes);

/**
 * Class probabilities (dropout off) for `rows` row-major samples of width `dim`.
 * `out` receives `rows * num_classes` values.
 *
 * # Safety
 * `x` must be valid for `rows * dim` reads and `out` for `out_len` writes.
 */
enum AllabStatus allab_model_predict_proba(const struct AllabModel *model,
                                           const double *x,
                                           size_t rows,
                                           size_t dim,
                                           double *out,
                                           size_t out_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void allab_model_free(struct AllabModel *model);

/**
 * Entropy scores (nats) of `rows` row-major probability vectors of width `cols`.
 *
 * # Safety
 * `probs` must be valid for `rows * cols` reads and `out` for `rows` writes.
 */
enum AllabStatus allab_score_entropy(const double *probs, size_t rows, size_t cols, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALLAB_H */
