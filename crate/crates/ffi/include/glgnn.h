#ifndef GLGNN_H
#define GLGNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum GlgnnStatus {
  GLGNN_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  GLGNN_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8, or a buffer was too small.
   */
  GLGNN_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Bad configuration key or value.
   */
  GLGNN_STATUS_CONFIG = 3,
  /**
   * Malformed, inconsistent or unreadable dataset, split or checkpoint.
   */
  GLGNN_STATUS_DATA = 4,
  /**
   * Training produced a non-finite loss or parameter.
   */
  GLGNN_STATUS_NON_FINITE = 5,
  /**
   * Internal contract or shape violation.
   */
  GLGNN_STATUS_INTERNAL = 6,
  /**
   * A panic was caught at the boundary.
   */
  GLGNN_STATUS_PANIC = 7,
} GlgnnStatus;

/**
 * A mutable training configuration, starting from the defaults.
 */
typedef struct GlgnnConfig GlgnnConfig;

/**
 * A loaded or generated dataset.
 */
typedef struct GlgnnDataset GlgnnDataset;

/**
 * The outcome of one training run: metrics and best-validation parameters.
 */
typedef struct GlgnnRun GlgnnRun;

typedef struct GlgnnDatasetInfo {
  size_t num_nodes;
  size_t num_features;
  size_t num_classes;
  /**
   * Undirected edges without self-loops.
   */
  size_t num_edges;
} GlgnnDatasetInfo;

typedef struct GlgnnRunSummary {
  double test_acc;
  double best_val_acc;
  size_t best_epoch;
  size_t epochs_run;
  bool stopped_early;
} GlgnnRunSummary;

typedef struct GlgnnEpoch {
  size_t epoch;
  double train_acc;
  double val_acc;
  double test_acc;
  double loss_ce;
  /**
   * 0 for heads without label features.
   */
  double loss_gl;
} GlgnnEpoch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *glgnn_last_error(void);

void glgnn_clear_error(void);

/**
 * Library version as a static string.
 */
const char *glgnn_version(void);

/**
 * Loads a dataset directory. `row_normalize` is -1 for the dataset's own
 * setting, 0 to disable and 1 to enable feature row normalization.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum GlgnnStatus glgnn_dataset_load(const char *path,
                                    int32_t row_normalize,
                                    struct GlgnnDataset **out);

/**
 * Generates a stochastic block model dataset with `num_blocks` communities of
 * the given sizes.
 *
 * # Safety
 * `block_sizes` must point to `num_blocks` values and `out` must be valid.
 */
enum GlgnnStatus glgnn_dataset_generate_sbm(const size_t *block_sizes,
                                            size_t num_blocks,
                                            double p_in,
                                            double p_out,
                                            size_t feature_dim,
                                            double noise,
                                            uint64_t seed,
                                            struct GlgnnDataset **out);

/**
 * # Safety
 * `ds` and `info` must be valid pointers.
 */
enum GlgnnStatus glgnn_dataset_info(const struct GlgnnDataset *ds, struct GlgnnDatasetInfo *info);

/**
 * # Safety
 * `ds` must come from a glgnn constructor and not be used afterwards.
 */
void glgnn_dataset_free(struct GlgnnDataset *ds);

/**
 * A configuration holding the defaults.
 */
struct GlgnnConfig *glgnn_config_new(void);

/**
 * Sets one `key` to `value` using the same keys as the command line.
 *
 * # Safety
 * `cfg` must be valid; `key` and `value` must be NUL-terminated strings.
 */
enum GlgnnStatus glgnn_config_set(struct GlgnnConfig *cfg, const char *key, const char *value);

/**
 * Writes the value of `key` into `buf`. `needed` (optional) receives the
 * size including the terminator; pass a null `buf` with zero capacity to
 * query it.
 *
 * # Safety
 * `cfg` and `key` must be valid; `buf` must hold `capacity` bytes.
 */
enum GlgnnStatus glgnn_config_get(const struct GlgnnConfig *cfg,
                                  const char *key,
                                  char *buf,
                                  size_t capacity,
                                  size_t *needed);

/**
 * # Safety
 * `cfg` must come from [`glgnn_config_new`] and not be used afterwards.
 */
void glgnn_config_free(struct GlgnnConfig *cfg);

/**
 * Trains on the named split of `ds`.
 *
 * # Safety
 * `ds`, `cfg`, `split` and `out` must be valid.
 */
enum GlgnnStatus glgnn_train(const struct GlgnnDataset *ds,
                             const char *split,
                             const struct GlgnnConfig *cfg,
                             struct GlgnnRun **out);

/**
 * # Safety
 * `run` and `summary` must be valid.
 */
enum GlgnnStatus glgnn_run_summary(const struct GlgnnRun *run, struct GlgnnRunSummary *summary);

/**
 * Record of epoch number `index + 1`.
 *
 * # Safety
 * `run` and `epoch` must be valid.
 */
enum GlgnnStatus glgnn_run_epoch(const struct GlgnnRun *run,
                                 size_t index,
                                 struct GlgnnEpoch *epoch);

/**
 * Writes the per-epoch metrics CSV.
 *
 * # Safety
 * `run` and `path` must be valid.
 */
enum GlgnnStatus glgnn_run_write_metrics(const struct GlgnnRun *run, const char *path);

/**
 * Saves the best-validation parameters as a checkpoint file.
 *
 * # Safety
 * `run` and `path` must be valid.
 */
enum GlgnnStatus glgnn_run_save_checkpoint(const struct GlgnnRun *run, const char *path);

/**
 * Eval-mode class probabilities for every node of `ds`, row-major
 * `num_nodes × num_classes`. `out` must hold `capacity` doubles.
 *
 * # Safety
 * `run`, `ds` and `out` must be valid.
 */
enum GlgnnStatus glgnn_run_predict(const struct GlgnnRun *run,
                                   const struct GlgnnDataset *ds,
                                   double *out,
                                   size_t capacity);

/**
 * # Safety
 * `run` must come from [`glgnn_train`] and not be used afterwards.
 */
void glgnn_run_free(struct GlgnnRun *run);

/**
 * Estimated multiply-accumulates of one forward pass, in millions.
 *
 * # Safety
 * `ds`, `cfg` and `millions` must be valid.
 */
enum GlgnnStatus glgnn_flops(const struct GlgnnDataset *ds,
                             const struct GlgnnConfig *cfg,
                             double *millions);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLGNN_H */
