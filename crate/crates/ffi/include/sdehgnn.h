#ifndef SDEHGNN_H
#define SDEHGNN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SdehgnnStatus {
  SDEHGNN_STATUS_OK = 0,
  // A required pointer argument was null or a string was not UTF-8.
  SDEHGNN_STATUS_INVALID_ARGUMENT = 1,
  SDEHGNN_STATUS_CONFIG = 2,
  SDEHGNN_STATUS_IO = 3,
  SDEHGNN_STATUS_NUMERICAL = 4,
  SDEHGNN_STATUS_MISMATCH = 5,
  // Any other library error.
  SDEHGNN_STATUS_FAILED = 6,
  SDEHGNN_STATUS_INTERNAL = 7,
} SdehgnnStatus;

typedef struct SdehgnnCohort SdehgnnCohort;

typedef struct SdehgnnFeatures SdehgnnFeatures;

typedef struct SdehgnnModel SdehgnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next library call on the same thread.
const char *sdehgnn_last_error(void);

// Generates a synthetic cohort. `spec_json` is a cohort specification in
// JSON (omitted keys default); null means all defaults.
//
// # Safety
// `spec_json` must be null or a nul-terminated string; `out` must be writable.
enum SdehgnnStatus sdehgnn_cohort_generate(const char *spec_json, struct SdehgnnCohort **out);

// # Safety
// `dir` must be a nul-terminated path; `out` must be writable.
enum SdehgnnStatus sdehgnn_cohort_load(const char *dir, struct SdehgnnCohort **out);

// # Safety
// `cohort` must come from this library; `dir` must be a nul-terminated path.
enum SdehgnnStatus sdehgnn_cohort_save(const struct SdehgnnCohort *cohort, const char *dir);

// Number of subjects, or 0 for a null handle.
//
// # Safety
// `cohort` must be null or come from this library.
size_t sdehgnn_cohort_len(const struct SdehgnnCohort *cohort);

// Label (0 stable, 1 progressive) and visit count of subject `index`.
//
// # Safety
// `cohort` must come from this library; `label` and `visits` must be writable.
enum SdehgnnStatus sdehgnn_cohort_subject(const struct SdehgnnCohort *cohort,
                                          size_t index,
                                          uint8_t *label,
                                          size_t *visits);

// # Safety
// `cohort` must be null or come from this library, and not be used afterwards.
void sdehgnn_cohort_free(struct SdehgnnCohort *cohort);

// Loads a feature directory written by `sdehgnn reconstruct`.
//
// # Safety
// `dir` must be a nul-terminated path; `out` must be writable.
enum SdehgnnStatus sdehgnn_features_load(const char *dir, struct SdehgnnFeatures **out);

// # Safety
// `features` must be null or come from this library.
size_t sdehgnn_features_len(const struct SdehgnnFeatures *features);

// Labels of every subject, in manifest order, into `labels[0..len]`.
//
// # Safety
// `features` must come from this library; `labels` must hold `len` bytes.
enum SdehgnnStatus sdehgnn_features_labels(const struct SdehgnnFeatures *features,
                                           uint8_t *labels,
                                           size_t len);

// # Safety
// `features` must be null or come from this library, and not be used afterwards.
void sdehgnn_features_free(struct SdehgnnFeatures *features);

// Loads a model checkpoint written by `sdehgnn crossval`.
//
// # Safety
// `path` must be a nul-terminated path; `out` must be writable.
enum SdehgnnStatus sdehgnn_model_load(const char *path, struct SdehgnnModel **out);

// Number of ROIs the model expects, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from this library.
size_t sdehgnn_model_n_nodes(const struct SdehgnnModel *model);

// Progression logits for every subject of `features` (deterministic mean
// path) into `logits[0..len]`; `len` must equal the subject count.
//
// # Safety
// Handles must come from this library; `logits` must hold `len` doubles.
enum SdehgnnStatus sdehgnn_model_predict(const struct SdehgnnModel *model,
                                         const struct SdehgnnFeatures *features,
                                         double *logits,
                                         size_t len);

// # Safety
// `model` must be null or come from this library, and not be used afterwards.
void sdehgnn_model_free(struct SdehgnnModel *model);

// Rank-based ROC AUC with ties counted half. Labels are 0 or 1.
//
// # Safety
// `scores` and `labels` must hold `n` elements; `out` must be writable.
enum SdehgnnStatus sdehgnn_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Builds the k-nearest-neighbour hypergraph of the row-major `n_nodes ×
// feature_dim` matrix `x` and writes its normalized `n_nodes × n_nodes`
// propagation operator, row-major, into `out`.
//
// # Safety
// `x` must hold `n_nodes * feature_dim` doubles and `out` `n_nodes * n_nodes`.
enum SdehgnnStatus sdehgnn_hypergraph_propagation(const double *x,
                                                  size_t n_nodes,
                                                  size_t feature_dim,
                                                  size_t k,
                                                  double q,
                                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDEHGNN_H */
