#ifndef GANDA_H
#define GANDA_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum GandaStatus {
  GANDA_STATUS_OK = 0,
  /**
   * A pointer argument was NULL or otherwise invalid.
   */
  GANDA_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The JSON config failed to parse or validate.
   */
  GANDA_STATUS_CONFIG_ERROR = 2,
  /**
   * Training aborted on a non-finite loss.
   */
  GANDA_STATUS_DIVERGED = 3,
  /**
   * File could not be read or parsed.
   */
  GANDA_STATUS_IO_ERROR = 4,
  /**
   * Any other internal failure.
   */
  GANDA_STATUS_INTERNAL_ERROR = 5,
} GandaStatus;

/**
 * Opaque handle over a source/target domain pair.
 */
typedef struct GandaDataset GandaDataset;

/**
 * Opaque handle over a finished training run (model + history).
 */
typedef struct GandaRun GandaRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message into `buf` (up to `len` bytes including the
 * terminating NUL). Returns the number of bytes the full message needs,
 * including the NUL; 0 when no error is recorded.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes, or be NULL (then only
 * the required length is returned).
 */
uintptr_t ganda_last_error_message(char *buf, uintptr_t len);

/**
 * Twin-moons domain pair with the target rotated by `rotation_degrees`.
 *
 * # Safety
 * `out` must be a valid pointer to a `GandaDataset*` slot.
 */
enum GandaStatus ganda_dataset_moons(uintptr_t n_per_class,
                                     double rotation_degrees,
                                     double noise_sigma,
                                     uint64_t seed,
                                     struct GandaDataset **out);

/**
 * Gaussian-blob domain pair; `shift` must point to `dim` doubles.
 *
 * # Safety
 * `shift` must point to `dim` readable doubles; `out` must be valid.
 */
enum GandaStatus ganda_dataset_blobs(uintptr_t class_count,
                                     uintptr_t dim,
                                     uintptr_t n_per_class,
                                     double center_spread,
                                     const double *shift,
                                     uint64_t seed,
                                     struct GandaDataset **out);

/**
 * Load a domain pair from two headerless feature CSV files
 * (comma-separated reals then an integer label per row).
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `out` must be valid.
 */
enum GandaStatus ganda_dataset_load_csv(const char *source_path,
                                        const char *target_path,
                                        struct GandaDataset **out);

/**
 * # Safety
 * `dataset` must come from a `ganda_dataset_*` constructor, not yet freed.
 */
void ganda_dataset_free(struct GandaDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle.
 */
uintptr_t ganda_dataset_source_len(const struct GandaDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle.
 */
uintptr_t ganda_dataset_target_len(const struct GandaDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle.
 */
uintptr_t ganda_dataset_dim(const struct GandaDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle.
 */
uintptr_t ganda_dataset_class_count(const struct GandaDataset *dataset);

/**
 * Train a model. `config_json` carries the training config as JSON, the
 * same schema the CLI's `run --config` accepts. On divergence the run
 * handle is still produced (with the history up to the last good epoch)
 * and the status is `GANDA_STATUS_DIVERGED`.
 *
 * # Safety
 * `dataset` must be a live handle, `config_json` a NUL-terminated string,
 * `out` a valid slot.
 */
enum GandaStatus ganda_fit(const struct GandaDataset *dataset,
                           const char *config_json,
                           struct GandaRun **out);

/**
 * # Safety
 * `run` must come from `ganda_fit`, not yet freed.
 */
void ganda_run_free(struct GandaRun *run);

/**
 * # Safety
 * `run` must be a live handle.
 */
uintptr_t ganda_run_epochs(const struct GandaRun *run);

/**
 * 1 when the run aborted on a non-finite loss.
 *
 * # Safety
 * `run` must be a live handle.
 */
int32_t ganda_run_diverged(const struct GandaRun *run);

/**
 * Final target-domain accuracy, or -1 when the history is empty.
 *
 * # Safety
 * `run` must be a live handle.
 */
double ganda_run_final_target_accuracy(const struct GandaRun *run);

/**
 * The per-epoch history as a JSON array string. Free with
 * `ganda_string_free`.
 *
 * # Safety
 * `run` must be a live handle; `out` a valid slot.
 */
enum GandaStatus ganda_run_history_json(const struct GandaRun *run, char **out);

/**
 * Classify `n` rows of `dim` features; writes `n` class indices to
 * `out_labels`.
 *
 * # Safety
 * `features` must point to `n * dim` readable doubles and `out_labels` to
 * `n` writable usize slots; `run` must be a live handle.
 */
enum GandaStatus ganda_run_predict(const struct GandaRun *run,
                                   const double *features,
                                   uintptr_t n,
                                   uintptr_t dim,
                                   uintptr_t *out_labels);

/**
 * Run the finite-difference gradient check for one seed; writes the maximum
 * relative error observed.
 *
 * # Safety
 * `out_max_rel_err` must be a valid pointer to a double.
 */
enum GandaStatus ganda_grad_check(uint64_t seed, double *out_max_rel_err);

/**
 * # Safety
 * `s` must be a string returned by this library, not yet freed.
 */
void ganda_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* GANDA_H */
