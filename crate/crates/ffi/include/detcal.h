#ifndef DETCAL_H
#define DETCAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DETCAL_LABEL_NEGATIVE 0

#define DETCAL_LABEL_POSITIVE 1

typedef enum DetcalStatus {
  DETCAL_STATUS_OK = 0,
  DETCAL_STATUS_NULL_POINTER = 1,
  DETCAL_STATUS_DIMENSION = 2,
  DETCAL_STATUS_DOMAIN = 3,
  DETCAL_STATUS_SCHEMA = 4,
  DETCAL_STATUS_PARSE = 5,
  DETCAL_STATUS_IO = 6,
  DETCAL_STATUS_INVALID_UTF8 = 7,
  DETCAL_STATUS_PANIC = 8,
} DetcalStatus;

/**
 * Fields addressable through `detcal_config_set` / `detcal_config_get`.
 */
typedef enum DetcalConfigField {
  DETCAL_CONFIG_FIELD_LAMBDA = 0,
  DETCAL_CONFIG_FIELD_ALPHA0 = 1,
  DETCAL_CONFIG_FIELD_GAMMA = 2,
  DETCAL_CONFIG_FIELD_AREA_SCALE = 3,
  DETCAL_CONFIG_FIELD_FLOOR = 4,
  DETCAL_CONFIG_FIELD_BASE = 5,
  DETCAL_CONFIG_FIELD_SLOPE = 6,
} DetcalConfigField;

/**
 * Metrics readable through `detcal_report_metric`.
 */
typedef enum DetcalMetric {
  DETCAL_METRIC_AP = 0,
  DETCAL_METRIC_AP50 = 1,
  DETCAL_METRIC_AP75 = 2,
  DETCAL_METRIC_AP_SMALL = 3,
  DETCAL_METRIC_AP_MEDIUM = 4,
  DETCAL_METRIC_AP_LARGE = 5,
} DetcalMetric;

typedef struct DetcalBdaParams DetcalBdaParams;

typedef struct DetcalConfig DetcalConfig;

typedef struct DetcalDataset DetcalDataset;

typedef struct DetcalReport DetcalReport;

/**
 * Axis-aligned box: left, top, width, height in pixels.
 */
typedef struct DetcalBox {
  double x;
  double y;
  double w;
  double h;
} DetcalBox;

typedef struct DetcalDetection {
  uint64_t image_id;
  uint64_t category_id;
  struct DetcalBox bbox;
  double score;
} DetcalDetection;

typedef struct DetcalGroundTruth {
  uint64_t image_id;
  uint64_t category_id;
  struct DetcalBox bbox;
} DetcalGroundTruth;

/**
 * Read-only channel-major `channels x height x width` array.
 */
typedef struct DetcalTensor {
  const double *data;
  size_t channels;
  size_t height;
  size_t width;
} DetcalTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *detcal_version(void);

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *detcal_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void detcal_string_free(char *s);

/**
 * # Safety
 * `a`, `b` and `out` must be valid pointers.
 */
enum DetcalStatus detcal_iou(const struct DetcalBox *a, const struct DetcalBox *b, double *out);

/**
 * # Safety
 * `cfg` may be null (defaults); `out` must be valid.
 */
enum DetcalStatus detcal_adaptive_threshold(double w,
                                            double h,
                                            const struct DetcalConfig *cfg,
                                            double *out);

/**
 * # Safety
 * `out` must be valid.
 */
enum DetcalStatus detcal_alpha_schedule(double progress, double alpha0, double *out);

/**
 * # Safety
 * `out` must be valid.
 */
enum DetcalStatus detcal_dynamic_iou(double a_iou,
                                     double r_iou,
                                     double alpha,
                                     double gamma_exp,
                                     double *out);

/**
 * New configuration holding the default values.
 */
struct DetcalConfig *detcal_config_new(void);

/**
 * # Safety
 * `cfg` must be null or a handle from `detcal_config_new`, freed once.
 */
void detcal_config_free(struct DetcalConfig *cfg);

/**
 * Sets one `DetcalConfigField`. The configuration is left unchanged when
 * the new value makes it invalid.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum DetcalStatus detcal_config_set(struct DetcalConfig *cfg, uint32_t field, double value);

/**
 * # Safety
 * `cfg` must be a live handle and `out` valid.
 */
enum DetcalStatus detcal_config_get(const struct DetcalConfig *cfg, uint32_t field, double *out);

/**
 * Labels `n_anchors` anchors against `n_gts` ground truths.
 *
 * `labels` receives `DETCAL_LABEL_POSITIVE` or `DETCAL_LABEL_NEGATIVE`.
 * The optional outputs receive the matched ground-truth index (-1 for
 * none), the dynamic IoU and the threshold used (NaN for none).
 *
 * # Safety
 * Input arrays must hold the stated counts; every non-null output array
 * must hold `n_anchors` entries. `cfg` may be null (defaults).
 */
enum DetcalStatus detcal_assign(const struct DetcalBox *anchors,
                                const struct DetcalBox *regressed,
                                size_t n_anchors,
                                const struct DetcalBox *gts,
                                size_t n_gts,
                                double progress,
                                const struct DetcalConfig *cfg,
                                uint8_t *labels,
                                int64_t *matched_gt,
                                double *diou,
                                double *threshold_used);

/**
 * Loads a COCO annotation file. `patient_field` names the per-image
 * patient identifier; null means `patient_id`.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `patient_field` null or one, and
 * `out` a valid pointer.
 */
enum DetcalStatus detcal_dataset_load(const char *path,
                                      const char *patient_field,
                                      struct DetcalDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from `detcal_dataset_load`, freed once.
 */
void detcal_dataset_free(struct DetcalDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle.
 */
size_t detcal_dataset_num_images(const struct DetcalDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle.
 */
size_t detcal_dataset_num_annotations(const struct DetcalDataset *ds);

/**
 * Area-ratio histogram over `n_edges - 1` bins into `counts`, and the
 * fraction of annotations with ratio at most `small_threshold` (NaN when
 * the dataset has no annotations).
 *
 * # Safety
 * `edges` must hold `n_edges` values, `counts` `n_edges - 1` entries;
 * `small_fraction` may be null.
 */
enum DetcalStatus detcal_dataset_ar_histogram(const struct DetcalDataset *ds,
                                              const double *edges,
                                              size_t n_edges,
                                              double small_threshold,
                                              size_t *counts,
                                              double *small_fraction);

/**
 * Patient-level split written as two COCO files.
 *
 * # Safety
 * `ds` must be a live handle and both paths NUL-terminated strings.
 */
enum DetcalStatus detcal_dataset_split(const struct DetcalDataset *ds,
                                       double train_fraction,
                                       uint64_t seed,
                                       const char *train_path,
                                       const char *test_path);

/**
 * COCO-style evaluation. `max_dets` of 0 keeps every detection.
 *
 * # Safety
 * Arrays must hold the stated counts and `out` must be valid.
 */
enum DetcalStatus detcal_evaluate(const struct DetcalDetection *dets,
                                  size_t n_dets,
                                  const struct DetcalGroundTruth *gts,
                                  size_t n_gts,
                                  size_t max_dets,
                                  struct DetcalReport **out);

/**
 * # Safety
 * `report` must be null or a handle from `detcal_evaluate`, freed once.
 */
void detcal_report_free(struct DetcalReport *report);

/**
 * Reads one `DetcalMetric`. `*defined` is false (and `*value` NaN) when
 * no ground truth falls in the metric's bucket.
 *
 * # Safety
 * `report` must be a live handle; `value` and `defined` valid pointers.
 */
enum DetcalStatus detcal_report_metric(const struct DetcalReport *report,
                                       uint32_t metric,
                                       double *value,
                                       bool *defined);

/**
 * Number of recall sample points in each precision curve.
 */
size_t detcal_recall_points(void);

/**
 * Interpolated precision at IoU threshold `0.50 + 0.05 * threshold_index`,
 * one value per recall point.
 *
 * # Safety
 * `report` must be a live handle; `out` must hold `len` values and `len`
 * must equal `detcal_recall_points()`.
 */
enum DetcalStatus detcal_report_precision(const struct DetcalReport *report,
                                          size_t threshold_index,
                                          double *out,
                                          size_t len);

/**
 * The full report as JSON, or null on failure. Free with
 * `detcal_string_free`.
 *
 * # Safety
 * `report` must be a live handle.
 */
char *detcal_report_to_json(const struct DetcalReport *report);

/**
 * Seeded random attention parameters for the given channel counts.
 *
 * # Safety
 * `out` must be valid.
 */
enum DetcalStatus detcal_bda_params_random(size_t channels,
                                           size_t scene_channels,
                                           size_t embed_channels,
                                           uint64_t seed,
                                           struct DetcalBdaParams **out);

/**
 * Parameters from their JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid.
 */
enum DetcalStatus detcal_bda_params_from_json(const char *json, struct DetcalBdaParams **out);

/**
 * # Safety
 * `params` must be null or a live handle, freed once.
 */
void detcal_bda_params_free(struct DetcalBdaParams *params);

/**
 * Attention output for pyramid map `p` and backbone map `c5`.
 *
 * # Safety
 * Tensor views must describe valid arrays; `out` must hold as many values
 * as `p`.
 */
enum DetcalStatus detcal_bda_forward(const struct DetcalBdaParams *params,
                                     const struct DetcalTensor *p,
                                     const struct DetcalTensor *c5,
                                     double *out);

/**
 * Input gradients for upstream gradient `upstream` (same shape as `p`).
 *
 * # Safety
 * Tensor views must describe valid arrays; `grad_p` must hold as many
 * values as `p` and `grad_c5` as many as `c5`.
 */
enum DetcalStatus detcal_bda_grad_input(const struct DetcalBdaParams *params,
                                        const struct DetcalTensor *p,
                                        const struct DetcalTensor *c5,
                                        const struct DetcalTensor *upstream,
                                        double *grad_p,
                                        double *grad_c5);

/**
 * Compares analytic input gradients with central finite differences.
 *
 * # Safety
 * Tensor views must describe valid arrays; `max_rel_error` and `pass` must
 * be valid pointers.
 */
enum DetcalStatus detcal_bda_grad_check(const struct DetcalBdaParams *params,
                                        const struct DetcalTensor *p,
                                        const struct DetcalTensor *c5,
                                        double tolerance,
                                        double *max_rel_error,
                                        bool *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DETCAL_H */
