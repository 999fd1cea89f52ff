#ifndef RECDCL_H
#define RECDCL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RDCL_STATUS_OK = 0,
  RDCL_STATUS_NULL_ARGUMENT = 1,
  RDCL_STATUS_INVALID_UTF8 = 2,
  RDCL_STATUS_IO = 3,
  RDCL_STATUS_PARSE = 4,
  RDCL_STATUS_DATA = 5,
  RDCL_STATUS_CONFIG = 6,
  RDCL_STATUS_SHAPE = 7,
  RDCL_STATUS_NUMERIC = 8,
  RDCL_STATUS_CHECKPOINT = 9,
  RDCL_STATUS_OUT_OF_RANGE = 10,
  RDCL_STATUS_PANIC = 11,
} RdclStatus;

/**
 * Training hyperparameters.
 */
typedef struct RdclConfig RdclConfig;

/**
 * Interactions with their train/valid/test assignment.
 */
typedef struct RdclCorpus RdclCorpus;

/**
 * Trained parameters bound to the graph of the corpus they belong to.
 */
typedef struct RdclModel RdclModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version. Static; never freed.
 */
const char *rdcl_version(void);

/**
 * Message of the last failed call on this thread, or an empty string after
 * a successful one. Valid until the next call on this thread.
 */
const char *rdcl_last_error(void);

/**
 * Reads a split manifest written by `recdcl split`.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
RdclStatus rdcl_corpus_load_manifest(const char *path, RdclCorpus **out);

/**
 * Reads a `user item [timestamp]` file, keeps `fraction` of the users and
 * splits per user with the given ratios.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
RdclStatus rdcl_corpus_ingest_split(const char *path,
                                    double fraction,
                                    double train,
                                    double valid,
                                    double test,
                                    uint64_t seed,
                                    RdclCorpus **out);

/**
 * # Safety
 * `corpus` must be a live handle; each output pointer may be null.
 */
RdclStatus rdcl_corpus_counts(const RdclCorpus *corpus,
                              size_t *users,
                              size_t *items,
                              size_t *pairs);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void rdcl_corpus_free(RdclCorpus *corpus);

/**
 * One of `beauty`, `food`, `game`, `yelp`.
 *
 * # Safety
 * `name` must be a valid C string and `out` a valid pointer.
 */
RdclStatus rdcl_config_preset(const char *name, RdclConfig **out);

/**
 * Sets one key as in a configuration file, e.g. `("F", "64")`.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` valid C strings.
 */
RdclStatus rdcl_config_set(RdclConfig *config, const char *key, const char *value);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void rdcl_config_free(RdclConfig *config);

/**
 * Trains with early stopping and returns the best checkpoint.
 * `best_valid_recall20` may be null.
 *
 * # Safety
 * `config` and `corpus` must be live handles and `out` a valid pointer.
 */
RdclStatus rdcl_train(const RdclConfig *config,
                      const RdclCorpus *corpus,
                      RdclModel **out,
                      double *best_valid_recall20);

/**
 * # Safety
 * `model` must be a live handle and `path` a valid C string.
 */
RdclStatus rdcl_model_save(const RdclModel *model, const char *path);

/**
 * Loads a checkpoint trained on `corpus`. Scores use raw inner products
 * unless `normalized` is non-zero.
 *
 * # Safety
 * `corpus` must be a live handle, `path` a valid C string and `out` a
 * valid pointer.
 */
RdclStatus rdcl_model_load(const RdclCorpus *corpus,
                           const char *path,
                           uint8_t normalized,
                           RdclModel **out);

/**
 * # Safety
 * `model` must be a live handle; output pointers may be null.
 */
RdclStatus rdcl_model_shape(const RdclModel *model, size_t *users, size_t *items, size_t *dim);

/**
 * Writes one score per item into `scores[0..len]`; `len` must equal the
 * item count. With `mask_train` non-zero the user's training items score
 * `-inf`.
 *
 * # Safety
 * `model` must be a live handle and `scores` valid for `len` writes.
 */
RdclStatus rdcl_model_score_user(const RdclModel *model,
                                 uint32_t user,
                                 uint8_t mask_train,
                                 double *scores,
                                 size_t len);

/**
 * Recall@k and NDCG@k on the valid (`split` = 1) or test (`split` = 2)
 * interactions of `corpus`, averaged over users holding any.
 *
 * # Safety
 * `model` and `corpus` must be live handles; output pointers may be null.
 */
RdclStatus rdcl_evaluate(const RdclModel *model,
                         const RdclCorpus *corpus,
                         uint8_t split,
                         size_t k,
                         double *recall,
                         double *ndcg);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void rdcl_model_free(RdclModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECDCL_H */
