/*
 * C interface to the HalluField scoring engine.
 *
 * All objects are opaque handles owned by the caller and released with the
 * matching *_free function. Every fallible call returns an hf_status; on
 * failure hf_last_error() describes the most recent error of the calling
 * thread as a JSON object {"code": ..., "message": ..., "detail": ...}.
 * Strings returned through char** out-parameters are heap allocated and must
 * be released with hf_string_free(). Paths equal to "-" mean stdin/stdout.
 */
#ifndef HALLUFIELD_H_
#define HALLUFIELD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(HALLUFIELD_BUILD)
#define HF_API __declspec(dllexport)
#else
#define HF_API __declspec(dllimport)
#endif
#else
#define HF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hf_status {
  HF_OK = 0,
  HF_ERR_INVALID_ARGUMENT = 1,
  HF_ERR_DOMAIN = 2,
  HF_ERR_MISSING_PERTURBATION = 3,
  HF_ERR_MODE_UNAVAILABLE = 4,
  HF_ERR_ENUMERATION_TOO_LARGE = 5,
  HF_ERR_PARSE = 6,
  HF_ERR_IO = 7,
  HF_ERR_INTERNAL = 8
} hf_status;

typedef enum hf_format { HF_FORMAT_JSON = 0, HF_FORMAT_CSV = 1 } hf_format;

typedef struct hf_dataset hf_dataset;
typedef struct hf_config hf_config;
typedef struct hf_report hf_report;

HF_API const char* hf_version(void);
HF_API const char* hf_status_name(hf_status status);
/* JSON error object for the calling thread's last failure ("" if none). */
HF_API const char* hf_last_error(void);
HF_API void hf_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

HF_API hf_status hf_config_default(hf_config** out);
HF_API hf_status hf_config_load(const char* path, hf_config** out);
HF_API hf_status hf_config_parse(const char* json_text, hf_config** out);
/* delta_ts must be strictly positive and strictly increasing. */
HF_API hf_status hf_config_set_delta_ts(hf_config* cfg, const double* delta_ts, size_t n);
HF_API hf_status hf_config_to_json(const hf_config* cfg, char** out_json);
HF_API void hf_config_free(hf_config* cfg);

/* ---- datasets ---------------------------------------------------------- */

typedef struct hf_simulation_params {
  size_t n_queries;
  size_t vocab_size;
  size_t max_len;
  double base_temperature;
  const double* delta_ts;
  size_t n_delta_ts;
  size_t samples_per_delta_t;
  uint64_t seed;
  double sharpness_low;
  double sharpness_high;
  int assign_clusters;
} hf_simulation_params;

/* Defaults: 200 queries, vocab 16, max_len 50, T0 0.5, delta_ts {0.5, 1.0,
 * 1.5}, L = 50, seed 0, sharpness 1.0 / 4.0, clusters on. The delta_ts
 * pointer refers to static storage. */
HF_API void hf_simulation_params_default(hf_simulation_params* params);
HF_API hf_status hf_dataset_simulate(const hf_simulation_params* params, hf_dataset** out);

/* Streaming parse of a JSON Lines trace file. Schema problems do not fail
 * the call; they are kept on the dataset (see hf_dataset_issues_json). */
HF_API hf_status hf_dataset_read_traces(const char* path, hf_dataset** out);
HF_API hf_status hf_dataset_parse_traces(const char* text, size_t len, hf_dataset** out);
HF_API hf_status hf_dataset_write_traces(const hf_dataset* ds, const char* path);
HF_API hf_status hf_dataset_write_labels(const hf_dataset* ds, const char* path);
/* Applies a query_id,label sidecar; sidecar wins. *out_conflicts may be NULL. */
HF_API hf_status hf_dataset_apply_labels(hf_dataset* ds, const char* path, size_t* out_conflicts);
HF_API size_t hf_dataset_size(const hf_dataset* ds);
HF_API size_t hf_dataset_issue_count(const hf_dataset* ds);
HF_API hf_status hf_dataset_issues_json(const hf_dataset* ds, char** out_json);
/* Parse issues plus structural violations of every bundle, as a JSON array;
 * *out_count (may be NULL) receives the total. */
HF_API hf_status hf_dataset_validate(const hf_dataset* ds, size_t max_tokens, char** out_json,
                                     size_t* out_count);
HF_API hf_status hf_dataset_digest(const hf_dataset* ds, char** out_hex);
HF_API void hf_dataset_free(hf_dataset* ds);

/* ---- scoring ------------------------------------------------------------ */

HF_API hf_status hf_score(const hf_dataset* ds, const hf_config* cfg, double calibration_fraction,
                          uint64_t calibration_seed, hf_report** out);
HF_API size_t hf_report_size(const hf_report* rep);
HF_API size_t hf_report_failure_count(const hf_report* rep);
HF_API hf_status hf_report_failures_json(const hf_report* rep, char** out_json);
HF_API hf_status hf_report_delta_u(const hf_report* rep, size_t index, double* out);
HF_API hf_status hf_report_write(const hf_report* rep, const char* path, hf_format format);
HF_API hf_status hf_report_metrics(const hf_report* rep, hf_format format, char** out);
HF_API void hf_report_free(hf_report* rep);

/* Metrics from a file written by hf_report_write (JSON or CSV). labels_path
 * may be NULL; when given, its labels override those in the score file. */
HF_API hf_status hf_evaluate_scores_file(const char* scores_path, const char* labels_path,
                                         double calibration_fraction, uint64_t calibration_seed,
                                         hf_format format, char** out);

/* Per-delta_t diagnostics CSV (class means, differences, AUCs). */
HF_API hf_status hf_diagnostics_csv(const hf_dataset* ds, const hf_config* cfg, char** out_csv);

/* ---- numerical primitives ---------------------------------------------- */

HF_API hf_status hf_softmax_temperature(const double* logits, size_t n, double temperature,
                                        double* out_probs);
/* labels[i] != 0 marks a positive. */
HF_API hf_status hf_roc_auc(const double* scores, const int* labels, size_t n, double* out_auc);

#ifdef __cplusplus
}
#endif

#endif /* HALLUFIELD_H_ */
