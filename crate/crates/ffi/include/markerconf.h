#ifndef MARKERCONF_H
#define MARKERCONF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McStatus {
  MC_STATUS_OK = 0,
  MC_STATUS_NULL_POINTER = 1,
  MC_STATUS_INVALID_UTF8 = 2,
  MC_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Input parsed but violates a precondition (empty, zero variance, ...).
   */
  MC_STATUS_DATA = 4,
  MC_STATUS_PARSE = 5,
  MC_STATUS_IO = 6,
  MC_STATUS_PANIC = 7,
} McStatus;

/**
 * Annotated corpus loaded from the annotation file format.
 */
typedef struct McAnnotationSet McAnnotationSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *mc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mc_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void mc_string_free(char *s);

/**
 * Sampling-consistency confidence from verdict counts: 1 − (na/2 + no)/K.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum McStatus mc_confidence(size_t yes, size_t na, size_t no, double *out);

/**
 * # Safety
 * `values` must point to `len` doubles; `out` to a double.
 */
enum McStatus mc_cv(const double *values, size_t len, double *out);

/**
 * # Safety
 * `correlations` must point to `len` doubles; `out` to a double.
 */
enum McStatus mc_fisher_mean(const double *correlations, size_t len, double *out);

/**
 * # Safety
 * `x` and `y` must each point to `len` doubles; `out` to a double.
 */
enum McStatus mc_pearson(const double *x, const double *y, size_t len, double *out);

/**
 * # Safety
 * `x` and `y` must each point to `len` doubles; `out` to a double.
 */
enum McStatus mc_spearman(const double *x, const double *y, size_t len, double *out);

/**
 * Pooled std of groups given as parallel arrays of sizes and sample stds.
 *
 * # Safety
 * `sizes` and `stds` must each point to `len` elements; `out` to a double.
 */
enum McStatus mc_pooled_std(const size_t *sizes, const double *stds, size_t len, double *out);

/**
 * Split `text` into sentences with the built-in rule segmenter. Writes a
 * JSON array of `{start, end, index}` byte spans.
 *
 * # Safety
 * `text` must be a NUL-terminated UTF-8 string; `out_json` a valid pointer.
 */
enum McStatus mc_segment(const char *text, char **out_json);

/**
 * Parse annotations from an in-memory annotation file.
 *
 * # Safety
 * `text` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
 */
enum McStatus mc_annotations_parse(const char *text, struct McAnnotationSet **out);

/**
 * Load annotations from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
 */
enum McStatus mc_annotations_load(const char *path, struct McAnnotationSet **out);

/**
 * # Safety
 * `set` must be NULL or a handle from this library not yet freed.
 */
void mc_annotations_free(struct McAnnotationSet *set);

/**
 * Number of sentence annotations in the set.
 *
 * # Safety
 * `set` must be a live handle; `out` a valid pointer.
 */
enum McStatus mc_annotations_sentence_count(const struct McAnnotationSet *set, size_t *out);

/**
 * Train-split MIC tables at support threshold `threshold`, as a JSON array.
 *
 * # Safety
 * `set` must be a live handle; `out_json` a valid pointer.
 */
enum McStatus mc_mic_tables_json(const struct McAnnotationSet *set,
                                 size_t threshold,
                                 char **out_json);

/**
 * Metric reports (one per model) as a JSON array. `options_json` is NULL
 * for defaults or a JSON object with any of `threshold`,
 * `exclude_no_hedge`, `aggregation`, `cmae_normalization`,
 * `response_confidence`, `relaxed_min_datasets`.
 *
 * # Safety
 * `set` must be a live handle; `options_json` NULL or a NUL-terminated
 * UTF-8 string; `out_json` a valid pointer.
 */
enum McStatus mc_metrics_json(const struct McAnnotationSet *set,
                              const char *options_json,
                              char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARKERCONF_H */
