/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef CLIMAX_H
#define CLIMAX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClimaxStatus {
  CLIMAX_STATUS_OK = 0,
  CLIMAX_STATUS_NULL_POINTER = 1,
  CLIMAX_STATUS_CONFIG = 2,
  CLIMAX_STATUS_DATA = 3,
  CLIMAX_STATUS_MODEL = 4,
  CLIMAX_STATUS_NUMERICAL = 5,
  CLIMAX_STATUS_PANIC = 6,
} ClimaxStatus;

typedef enum ClimaxMethod {
  CLIMAX_METHOD_LIME = 0,
  CLIMAX_METHOD_L_CLIMAX = 1,
  CLIMAX_METHOD_CE_CLIMAX = 2,
} ClimaxMethod;

typedef enum ClimaxBalancer {
  CLIMAX_BALANCER_NONE = 0,
  CLIMAX_BALANCER_ROS = 1,
  CLIMAX_BALANCER_GMM = 2,
} ClimaxBalancer;

typedef struct ClimaxExplanation ClimaxExplanation;

/**
 * A trained forest together with the feature scale of its training data.
 */
typedef struct ClimaxForest ClimaxForest;

/**
 * Options for [`climax_explain`]. Start from
 * [`climax_explain_options_default`]; a NaN `lambda` selects the method's
 * default penalty.
 */
typedef struct ClimaxExplainOptions {
  enum ClimaxMethod method;
  enum ClimaxBalancer balancer;
  bool influence;
  double keep_fraction;
  size_t n_prime;
  size_t k;
  double lambda;
  uint64_t seed;
} ClimaxExplainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *climax_last_error(void);

/**
 * Trains a forest on a row-major `n_rows × n_cols` matrix and class labels
 * `0..C`.
 *
 * # Safety
 * `data` must hold `n_rows * n_cols` values, `labels` `n_rows` values, and
 * `out` must be writable.
 */
enum ClimaxStatus climax_forest_train(const double *data,
                                      size_t n_rows,
                                      size_t n_cols,
                                      const size_t *labels,
                                      size_t n_trees,
                                      size_t max_depth,
                                      uint64_t seed,
                                      struct ClimaxForest **out);

/**
 * Writes class probabilities for `n_rows` row-major instances into `out`,
 * which must hold `n_rows * climax_forest_n_classes(forest)` values.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum ClimaxStatus climax_forest_predict_proba(const struct ClimaxForest *forest,
                                              const double *data,
                                              size_t n_rows,
                                              size_t n_cols,
                                              double *out,
                                              size_t out_len);

/**
 * Class count of the forest, or 0 for a null handle.
 *
 * # Safety
 * `forest` must be null or a live handle.
 */
size_t climax_forest_n_classes(const struct ClimaxForest *forest);

/**
 * Feature count of the forest, or 0 for a null handle.
 *
 * # Safety
 * `forest` must be null or a live handle.
 */
size_t climax_forest_n_features(const struct ClimaxForest *forest);

/**
 * # Safety
 * `forest` must be null or a handle not yet freed.
 */
void climax_forest_free(struct ClimaxForest *forest);

struct ClimaxExplainOptions climax_explain_options_default(void);

/**
 * Explains the forest's prediction at `x` (length `d`, feature units).
 *
 * # Safety
 * `forest` and `options` must be live, `x` must hold `d` values and `out`
 * must be writable.
 */
enum ClimaxStatus climax_explain(const struct ClimaxForest *forest,
                                 const double *x,
                                 size_t d,
                                 const struct ClimaxExplainOptions *options,
                                 struct ClimaxExplanation **out);

/**
 * Length of φ, or 0 for a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
size_t climax_explanation_n_features(const struct ClimaxExplanation *e);

/**
 * # Safety
 * `e` must be null or a live handle.
 */
size_t climax_explanation_target_class(const struct ClimaxExplanation *e);

/**
 * # Safety
 * `e` must be null or a live handle.
 */
double climax_explanation_intercept(const struct ClimaxExplanation *e);

/**
 * Copies φ into `out` (capacity `len` ≥ the feature count).
 *
 * # Safety
 * `out` must be writable for `len` values.
 */
enum ClimaxStatus climax_explanation_phi(const struct ClimaxExplanation *e,
                                         double *out,
                                         size_t len);

/**
 * Number of ranked top features, or 0 for a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
size_t climax_explanation_top_count(const struct ClimaxExplanation *e);

/**
 * Copies the ranked top features into `indices` and `scores` (capacity
 * `len` ≥ the top count).
 *
 * # Safety
 * Both outputs must be writable for `len` values.
 */
enum ClimaxStatus climax_explanation_top_features(const struct ClimaxExplanation *e,
                                                  size_t *indices,
                                                  double *scores,
                                                  size_t len);

/**
 * The explanation document as a newly allocated string; release it with
 * [`climax_string_free`]. NULL on a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
char *climax_explanation_document(const struct ClimaxExplanation *e);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void climax_string_free(char *s);

/**
 * # Safety
 * `e` must be null or a handle not yet freed.
 */
void climax_explanation_free(struct ClimaxExplanation *e);

/**
 * Jaccard index of two feature-index sets.
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` values; `out` must be writable.
 */
enum ClimaxStatus climax_jaccard(const size_t *a,
                                 size_t na,
                                 const size_t *b,
                                 size_t nb,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLIMAX_H */
