#ifndef XTSFORMER_H
#define XTSFORMER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum XtsStatus {
  XTS_STATUS_OK = 0,
  XTS_STATUS_NULL_POINTER = 1,
  XTS_STATUS_INVALID_ARGUMENT = 2,
  XTS_STATUS_IO = 3,
  XTS_STATUS_PARSE = 4,
  XTS_STATUS_CONFIG = 5,
  XTS_STATUS_MISMATCH = 6,
  XTS_STATUS_NON_FINITE = 7,
  XTS_STATUS_BUFFER_TOO_SMALL = 8,
  XTS_STATUS_PANIC = 9,
} XtsStatus;

// A multi-scale hierarchy over one sequence of timestamps.
typedef struct XtsHierarchy XtsHierarchy;

// A trained model restored from a checkpoint.
typedef struct XtsModel XtsModel;

// Next-event prediction. Times are in the units of the data the model was
// trained on.
typedef struct XtsPrediction {
  size_t predicted_type;
  double lambda;
  double shape;
  double expected_gap;
} XtsPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *xts_version(void);

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *xts_last_error_message(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from an `xts_*` function that returns an owned string, or be null.
void xts_string_free(char *s);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum XtsStatus xts_model_load(const char *path, struct XtsModel **out);

// # Safety
// `model` must come from [`xts_model_load`] and not be used afterwards.
void xts_model_free(struct XtsModel *model);

// Number of event types, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t xts_model_num_types(const struct XtsModel *model);

// Predicts the event following a history of `len` events. `probs` receives
// `num_types` type probabilities when non-null.
//
// # Safety
// `times` and `types` must point to `len` values; `probs` to `probs_len`
// values or be null; `out` must be valid.
enum XtsStatus xts_model_predict(const struct XtsModel *model,
                                 const double *times,
                                 const size_t *types,
                                 size_t len,
                                 double *probs,
                                 size_t probs_len,
                                 struct XtsPrediction *out);

// Builds a hierarchy with `num_scales` levels and the default merge split.
//
// # Safety
// `times` must point to `len` strictly increasing values; `out` must be valid.
enum XtsStatus xts_hierarchy_build(const double *times,
                                   size_t len,
                                   size_t num_scales,
                                   struct XtsHierarchy **out);

// Builds a hierarchy with explicit merge counts per scale interval.
//
// # Safety
// `times` must point to `len` values and `counts` to `num_counts` values;
// `out` must be valid.
enum XtsStatus xts_hierarchy_build_with_counts(const double *times,
                                               size_t len,
                                               const size_t *counts,
                                               size_t num_counts,
                                               struct XtsHierarchy **out);

// # Safety
// `h` must come from an `xts_hierarchy_build*` function and not be used afterwards.
void xts_hierarchy_free(struct XtsHierarchy *h);

// Number of scale levels, or 0 for a null handle.
//
// # Safety
// `h` must be a live handle or null.
size_t xts_hierarchy_num_scales(const struct XtsHierarchy *h);

// Number of nodes (leaves and merges), or 0 for a null handle.
//
// # Safety
// `h` must be a live handle or null.
size_t xts_hierarchy_num_nodes(const struct XtsHierarchy *h);

// Node ids in the frontier of scale `scale` (1-based). Writes the frontier
// size to `written` even when `cap` is too small.
//
// # Safety
// `h` must be live, `ids` must hold `cap` values (or be null when `cap` is
// 0), and `written` must be valid.
enum XtsStatus xts_hierarchy_frontier(const struct XtsHierarchy *h,
                                      size_t scale,
                                      size_t *ids,
                                      size_t cap,
                                      size_t *written);

// JSON description of the hierarchy. Release with [`xts_string_free`].
//
// # Safety
// `h` must be live and `out` valid.
enum XtsStatus xts_hierarchy_to_json(const struct XtsHierarchy *h, char **out);

// Negative log density of a Weibull(scale `lambda`, shape `shape`) at `t`.
// NaN when any argument is not positive.
double xts_weibull_nll(double lambda, double shape, double t);

// Mean of a Weibull distribution; NaN when an argument is not positive.
double xts_weibull_mean(double lambda, double shape);

// Query-key multiply-adds for cross-scale attention over the given key set
// sizes, and for dense attention over `len` events.
//
// # Safety
// `key_set_sizes` must point to `num_sets` values; the outputs must be valid.
enum XtsStatus xts_count_attention_flops(size_t len,
                                         size_t batch,
                                         size_t heads,
                                         size_t head_dim,
                                         const size_t *key_set_sizes,
                                         size_t num_sets,
                                         uint64_t *cross_out,
                                         uint64_t *dense_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XTSFORMER_H */
