/* Generated by cbindgen. Do not edit. */

#ifndef OWOD_H
#define OWOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
enum OwodStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  OWOD_STATUS_OK = 0,
  OWOD_STATUS_NULL_POINTER = -1,
  OWOD_STATUS_INVALID_UTF8 = -2,
  OWOD_STATUS_IO = -3,
  OWOD_STATUS_PARSE = -4,
  OWOD_STATUS_VALIDATION = -5,
  OWOD_STATUS_TASK_INDEX = -6,
  OWOD_STATUS_TASK_CONFIG = -7,
  OWOD_STATUS_INVALID_ARGUMENT = -8,
  OWOD_STATUS_PANIC = -99,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum OwodStatus OwodStatus;
#else
typedef int32_t OwodStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

enum OwodApMethod
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  OWOD_AP_METHOD_CONTINUOUS = 0,
  OWOD_AP_METHOD_VOC11 = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum OwodApMethod OwodApMethod;
#else
typedef int32_t OwodApMethod;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

enum OwodAoseMode
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  OWOD_AOSE_MODE_OBJECTS = 0,
  OWOD_AOSE_MODE_PREDICTIONS = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum OwodAoseMode OwodAoseMode;
#else
typedef int32_t OwodAoseMode;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

enum OwodMetric
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  OWOD_METRIC_WI = 0,
  OWOD_METRIC_A_OSE = 1,
  OWOD_METRIC_MAP_PREVIOUS = 2,
  OWOD_METRIC_MAP_CURRENT = 3,
  OWOD_METRIC_MAP_BOTH = 4,
  OWOD_METRIC_UR = 5,
  OWOD_METRIC_UDR = 6,
  OWOD_METRIC_UDP = 7,
  OWOD_METRIC_TP_K = 8,
  OWOD_METRIC_FP_K = 9,
  OWOD_METRIC_TP_U = 10,
  OWOD_METRIC_FN_U = 11,
  OWOD_METRIC_FN_U_STAR = 12,
  OWOD_METRIC_FP_O = 13,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum OwodMetric OwodMetric;
#else
typedef int32_t OwodMetric;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

enum OwodAnchorLabel
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  OWOD_ANCHOR_LABEL_POSITIVE = 0,
  OWOD_ANCHOR_LABEL_NEGATIVE = 1,
  OWOD_ANCHOR_LABEL_UNKNOWN_POSITIVE = 2,
  OWOD_ANCHOR_LABEL_IGNORE = 3,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum OwodAnchorLabel OwodAnchorLabel;
#else
typedef int32_t OwodAnchorLabel;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

typedef struct OwodDataset OwodDataset;

typedef struct OwodPredictions OwodPredictions;

typedef struct OwodProfile OwodProfile;

typedef struct OwodReport OwodReport;

typedef struct OwodTaskSpec OwodTaskSpec;

// Corner-format box.
typedef struct OwodBox {
  double x_min;
  double y_min;
  double x_max;
  double y_max;
} OwodBox;

typedef struct OwodEvalOptions {
  double iou_threshold;
  double score_threshold;
  double wi_recall;
  // An [`OwodApMethod`] value.
  int32_t ap_method;
  // An [`OwodAoseMode`] value.
  int32_t aose_mode;
} OwodEvalOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *owod_version(void);

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *owod_last_error_message(void);

// Frees a string returned by this library.
void owod_string_free(char *s);

// Intersection over union of two corner boxes; 0 for degenerate unions.
double owod_iou(struct OwodBox a, struct OwodBox b);

OwodStatus owod_dataset_load(const char *path, struct OwodDataset **out);

void owod_dataset_free(struct OwodDataset *dataset);

size_t owod_dataset_image_count(const struct OwodDataset *dataset);

size_t owod_dataset_annotation_count(const struct OwodDataset *dataset);

// Loads a task configuration (JSON, or TOML by extension) and resolves its
// class names against `dataset`.
OwodStatus owod_task_spec_load(const char *path,
                               const struct OwodDataset *dataset,
                               struct OwodTaskSpec **out);

void owod_task_spec_free(struct OwodTaskSpec *spec);

size_t owod_task_spec_len(const struct OwodTaskSpec *spec);

// Loads a prediction file whose class ids must belong to `dataset`.
OwodStatus owod_predictions_load(const char *path,
                                 const struct OwodDataset *dataset,
                                 struct OwodPredictions **out);

OwodStatus owod_predictions_write(const struct OwodPredictions *predictions, const char *path);

void owod_predictions_free(struct OwodPredictions *predictions);

size_t owod_predictions_len(const struct OwodPredictions *predictions);

// Number of predictions labelled unknown.
size_t owod_predictions_unknown_count(const struct OwodPredictions *predictions);

struct OwodEvalOptions owod_eval_options_default(void);

// Evaluates `predictions` for 1-based `task`. `options` may be NULL for the
// defaults.
OwodStatus owod_evaluate(const struct OwodDataset *dataset,
                         const struct OwodTaskSpec *spec,
                         const struct OwodPredictions *predictions,
                         size_t task,
                         const struct OwodEvalOptions *options,
                         struct OwodReport **out);

void owod_report_free(struct OwodReport *report);

// Reads one [`OwodMetric`]. `*has_value` is false when the metric is undefined
// (for example UDP with no unknown detections); `*value` is then NaN.
OwodStatus owod_report_metric(const struct OwodReport *report,
                              int32_t metric,
                              double *value,
                              bool *has_value);

// The full report as JSON. Free the result with [`owod_string_free`].
char *owod_report_json(const struct OwodReport *report);

// Builds an expelling profile. With a task spec the profile covers the
// classes known at `task`; with NULL it covers every dataset class.
OwodStatus owod_cec_calibrate(const struct OwodPredictions *train_predictions,
                              const struct OwodDataset *train_dataset,
                              const struct OwodTaskSpec *spec,
                              size_t task,
                              double phi,
                              double alpha,
                              struct OwodProfile **out);

OwodStatus owod_profile_load(const char *path, struct OwodProfile **out);

OwodStatus owod_profile_save(const struct OwodProfile *profile, const char *path);

void owod_profile_free(struct OwodProfile *profile);

// Expelling term `alpha * m_c` of one class; NaN when the class is absent.
double owod_profile_expelling_term(const struct OwodProfile *profile, uint32_t class_id);

// Re-labels predictions with `profile`. A NaN `alpha` keeps the profile's.
OwodStatus owod_cec_apply(const struct OwodPredictions *predictions,
                          const struct OwodProfile *profile,
                          double alpha,
                          struct OwodPredictions **out);

// Confirms potential unknown proposals against auxiliary boxes. Writes one
// score per potential into `scores`: its objectness when some auxiliary box
// overlaps it with IOU above `theta`, otherwise 0.
OwodStatus owod_pad_confirm(const struct OwodBox *potentials,
                            const double *objectness,
                            size_t potential_count,
                            const struct OwodBox *auxiliary,
                            size_t auxiliary_count,
                            double theta,
                            double *scores);

// Objectness loss over anchors given as parallel score and
// [`OwodAnchorLabel`] arrays.
OwodStatus owod_pad_rpn_cls_loss(const double *scores,
                                 const int32_t *labels,
                                 size_t count,
                                 double *loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OWOD_H */
