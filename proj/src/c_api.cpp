#include "hallufield/hallufield.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hallufield/error.hpp"
#include "hallufield/eval_harness.hpp"
#include "hallufield/functionals.hpp"
#include "hallufield/toy_lm.hpp"
#include "hallufield/trace_io.hpp"

using namespace hallufield;

struct hf_dataset {
  std::vector<QueryBundle> bundles;
  std::vector<ParseIssue> issues;
};

struct hf_config {
  ScoreConfig config;
};

struct hf_report {
  DatasetScores scores;
};

namespace {

thread_local std::string g_last_error;

hf_status status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Domain: return HF_ERR_DOMAIN;
    case ErrorCode::MissingPerturbation: return HF_ERR_MISSING_PERTURBATION;
    case ErrorCode::ModeUnavailable: return HF_ERR_MODE_UNAVAILABLE;
    case ErrorCode::EnumerationTooLarge: return HF_ERR_ENUMERATION_TOO_LARGE;
    case ErrorCode::Parse: return HF_ERR_PARSE;
    case ErrorCode::Io: return HF_ERR_IO;
  }
  return HF_ERR_INTERNAL;
}

hf_status fail(hf_status status, const std::string& code, const std::string& message,
               const std::string& detail = {}) {
  nlohmann::json e = {{"code", code}, {"message", message}};
  if (!detail.empty()) {
    try {
      e["detail"] = nlohmann::json::parse(detail);
    } catch (const nlohmann::json::exception&) {
      e["detail"] = detail;
    }
  }
  g_last_error = e.dump();
  return status;
}

template <typename Fn>
hf_status guarded(Fn&& fn) noexcept {
  try {
    g_last_error.clear();
    fn();
    return HF_OK;
  } catch (const Error& e) {
    return fail(status_for(e.code()), std::string(error_code_name(e.code())), e.what(), e.detail());
  } catch (const std::bad_alloc&) {
    return fail(HF_ERR_INTERNAL, "OutOfMemory", "allocation failed");
  } catch (const std::exception& e) {
    return fail(HF_ERR_INTERNAL, "Internal", e.what());
  } catch (...) {
    return fail(HF_ERR_INTERNAL, "Internal", "unknown exception");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

std::string read_all(const char* path) {
  if (std::strcmp(path, "-") == 0) {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, std::string("cannot open '") + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Writer>
void write_to(const char* path, Writer&& writer) {
  if (std::strcmp(path, "-") == 0) {
    writer(std::cout);
    std::cout.flush();
    if (!std::cout) throw Error(ErrorCode::Io, "failed writing to stdout");
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, std::string("cannot open '") + path + "' for writing");
  writer(out);
  out.flush();
  if (!out) throw Error(ErrorCode::Io, std::string("failed writing '") + path + "'");
}

}  // namespace

#define HF_CHECK(cond, what)                                                \
  do {                                                                      \
    if (!(cond)) return fail(HF_ERR_INVALID_ARGUMENT, "InvalidArgument", what); \
  } while (0)

extern "C" {

const char* hf_version(void) { return "0.1.0"; }

const char* hf_status_name(hf_status status) {
  switch (status) {
    case HF_OK: return "OK";
    case HF_ERR_INVALID_ARGUMENT: return "InvalidArgument";
    case HF_ERR_DOMAIN: return "DomainError";
    case HF_ERR_MISSING_PERTURBATION: return "MissingPerturbation";
    case HF_ERR_MODE_UNAVAILABLE: return "ModeUnavailable";
    case HF_ERR_ENUMERATION_TOO_LARGE: return "EnumerationTooLarge";
    case HF_ERR_PARSE: return "ParseError";
    case HF_ERR_IO: return "IoError";
    case HF_ERR_INTERNAL: return "Internal";
  }
  return "Unknown";
}

const char* hf_last_error(void) { return g_last_error.c_str(); }

void hf_string_free(char* s) { std::free(s); }

// ---- configuration ----

hf_status hf_config_default(hf_config** out) {
  HF_CHECK(out != nullptr, "out is null");
  return guarded([&] { *out = new hf_config{}; });
}

hf_status hf_config_parse(const char* json_text, hf_config** out) {
  HF_CHECK(json_text != nullptr && out != nullptr, "null argument");
  return guarded([&] { *out = new hf_config{parse_config(json_text)}; });
}

hf_status hf_config_load(const char* path, hf_config** out) {
  HF_CHECK(path != nullptr && out != nullptr, "null argument");
  return guarded([&] { *out = new hf_config{parse_config(read_all(path))}; });
}

hf_status hf_config_set_delta_ts(hf_config* cfg, const double* delta_ts, size_t n) {
  HF_CHECK(cfg != nullptr && (delta_ts != nullptr || n == 0), "null argument");
  return guarded([&] {
    ScoreConfig next = cfg->config;
    next.delta_ts.assign(delta_ts, delta_ts + n);
    validate_config(next);
    cfg->config = std::move(next);
  });
}

hf_status hf_config_to_json(const hf_config* cfg, char** out_json) {
  HF_CHECK(cfg != nullptr && out_json != nullptr, "null argument");
  return guarded([&] { *out_json = dup_string(config_to_json(cfg->config)); });
}

void hf_config_free(hf_config* cfg) { delete cfg; }

// ---- datasets ----

void hf_simulation_params_default(hf_simulation_params* params) {
  static const double kDeltaTs[] = {0.5, 1.0, 1.5};
  if (params == nullptr) return;
  const DatasetParams d;
  params->n_queries = d.n_queries;
  params->vocab_size = 16;
  params->max_len = kDefaultMaxTokens;
  params->base_temperature = d.base_temperature;
  params->delta_ts = kDeltaTs;
  params->n_delta_ts = 3;
  params->samples_per_delta_t = d.samples_per_delta_t;
  params->seed = d.seed;
  params->sharpness_low = d.sharpness_low;
  params->sharpness_high = d.sharpness_high;
  params->assign_clusters = d.assign_clusters ? 1 : 0;
}

hf_status hf_dataset_simulate(const hf_simulation_params* params, hf_dataset** out) {
  HF_CHECK(params != nullptr && out != nullptr, "null argument");
  HF_CHECK(params->delta_ts != nullptr || params->n_delta_ts == 0, "delta_ts is null");
  return guarded([&] {
    DatasetParams d;
    d.n_queries = params->n_queries;
    d.base_temperature = params->base_temperature;
    d.delta_ts.assign(params->delta_ts, params->delta_ts + params->n_delta_ts);
    d.samples_per_delta_t = params->samples_per_delta_t;
    d.seed = params->seed;
    d.sharpness_low = params->sharpness_low;
    d.sharpness_high = params->sharpness_high;
    d.assign_clusters = params->assign_clusters != 0;
    const ToyModel model =
        ToyModel::random(params->vocab_size, mix_seed(params->seed, 0x6d6f64656cULL), d.peak_boost,
                         params->max_len);
    auto ds = std::make_unique<hf_dataset>();
    ds->bundles = make_dataset(model, d);
    *out = ds.release();
  });
}

hf_status hf_dataset_read_traces(const char* path, hf_dataset** out) {
  HF_CHECK(path != nullptr && out != nullptr, "null argument");
  return guarded([&] {
    auto ds = std::make_unique<hf_dataset>();
    ParseResult parsed;
    if (std::strcmp(path, "-") == 0) {
      parsed = parse_traces(std::cin);
    } else {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error(ErrorCode::Io, std::string("cannot open '") + path + "' for reading");
      parsed = parse_traces(in);
      if (in.bad()) throw Error(ErrorCode::Io, std::string("failed reading '") + path + "'");
    }
    ds->bundles = std::move(parsed.bundles);
    ds->issues = std::move(parsed.issues);
    *out = ds.release();
  });
}

hf_status hf_dataset_parse_traces(const char* text, size_t len, hf_dataset** out) {
  HF_CHECK(out != nullptr && (text != nullptr || len == 0), "null argument");
  return guarded([&] {
    std::istringstream in(std::string(text == nullptr ? "" : text, len));
    auto parsed = parse_traces(in);
    *out = new hf_dataset{std::move(parsed.bundles), std::move(parsed.issues)};
  });
}

hf_status hf_dataset_write_traces(const hf_dataset* ds, const char* path) {
  HF_CHECK(ds != nullptr && path != nullptr, "null argument");
  return guarded([&] { write_to(path, [&](std::ostream& o) { write_traces(o, ds->bundles); }); });
}

hf_status hf_dataset_write_labels(const hf_dataset* ds, const char* path) {
  HF_CHECK(ds != nullptr && path != nullptr, "null argument");
  return guarded([&] { write_to(path, [&](std::ostream& o) { write_labels_csv(o, ds->bundles); }); });
}

hf_status hf_dataset_apply_labels(hf_dataset* ds, const char* path, size_t* out_conflicts) {
  HF_CHECK(ds != nullptr && path != nullptr, "null argument");
  return guarded([&] {
    std::istringstream in(read_all(path));
    const auto warnings = apply_labels(ds->bundles, read_labels_csv(in));
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    if (out_conflicts != nullptr) *out_conflicts = warnings.size();
  });
}

size_t hf_dataset_size(const hf_dataset* ds) { return ds == nullptr ? 0 : ds->bundles.size(); }

size_t hf_dataset_issue_count(const hf_dataset* ds) { return ds == nullptr ? 0 : ds->issues.size(); }

hf_status hf_dataset_issues_json(const hf_dataset* ds, char** out_json) {
  HF_CHECK(ds != nullptr && out_json != nullptr, "null argument");
  return guarded([&] { *out_json = dup_string(issues_to_json(ds->issues)); });
}

hf_status hf_dataset_validate(const hf_dataset* ds, size_t max_tokens, char** out_json,
                              size_t* out_count) {
  HF_CHECK(ds != nullptr && out_json != nullptr, "null argument");
  return guarded([&] {
    nlohmann::json arr = nlohmann::json::parse(issues_to_json(ds->issues));
    for (const auto& b : ds->bundles) {
      for (const auto& v : validate_bundle(b, max_tokens == 0 ? kDefaultMaxTokens : max_tokens)) {
        arr.push_back({{"code", v.code}, {"query_id", b.query_id}, {"message", v.message}});
      }
    }
    if (out_count != nullptr) *out_count = arr.size();
    *out_json = dup_string(arr.dump());
  });
}

hf_status hf_dataset_digest(const hf_dataset* ds, char** out_hex) {
  HF_CHECK(ds != nullptr && out_hex != nullptr, "null argument");
  return guarded([&] { *out_hex = dup_string(dataset_digest(ds->bundles)); });
}

void hf_dataset_free(hf_dataset* ds) { delete ds; }

// ---- scoring ----

hf_status hf_score(const hf_dataset* ds, const hf_config* cfg, double calibration_fraction,
                   uint64_t calibration_seed, hf_report** out) {
  HF_CHECK(ds != nullptr && cfg != nullptr && out != nullptr, "null argument");
  return guarded([&] {
    EvalOptions options{calibration_fraction, calibration_seed};
    *out = new hf_report{score_dataset(ds->bundles, cfg->config, options)};
  });
}

size_t hf_report_size(const hf_report* rep) { return rep == nullptr ? 0 : rep->scores.reports.size(); }

size_t hf_report_failure_count(const hf_report* rep) {
  if (rep == nullptr) return 0;
  size_t n = 0;
  for (const auto& r : rep->scores.reports) n += r.ok() ? 0 : 1;
  return n;
}

hf_status hf_report_failures_json(const hf_report* rep, char** out_json) {
  HF_CHECK(rep != nullptr && out_json != nullptr, "null argument");
  return guarded([&] {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rep->scores.reports) {
      if (r.ok()) continue;
      nlohmann::json f = {{"query_id", r.query_id}, {"code", r.failure->code},
                          {"message", r.failure->message}};
      if (!r.failure->detail.empty()) f["detail"] = nlohmann::json::parse(r.failure->detail);
      arr.push_back(std::move(f));
    }
    *out_json = dup_string(arr.dump());
  });
}

hf_status hf_report_delta_u(const hf_report* rep, size_t index, double* out) {
  HF_CHECK(rep != nullptr && out != nullptr, "null argument");
  HF_CHECK(index < rep->scores.reports.size(), "report index out of range");
  const auto& r = rep->scores.reports[index];
  if (!r.ok()) return fail(HF_ERR_DOMAIN, "DomainError", "query '" + r.query_id + "' failed to score");
  *out = r.delta_u;
  return HF_OK;
}

hf_status hf_report_write(const hf_report* rep, const char* path, hf_format format) {
  HF_CHECK(rep != nullptr && path != nullptr, "null argument");
  return guarded([&] {
    const std::string text = format == HF_FORMAT_CSV
                                 ? reports_to_csv(rep->scores.reports)
                                 : reports_to_json(rep->scores.reports, rep->scores.metrics);
    write_to(path, [&](std::ostream& o) { o << text; });
  });
}

hf_status hf_report_metrics(const hf_report* rep, hf_format format, char** out) {
  HF_CHECK(rep != nullptr && out != nullptr, "null argument");
  return guarded([&] {
    *out = dup_string(format == HF_FORMAT_CSV ? metrics_to_csv(rep->scores.metrics)
                                              : metrics_to_json(rep->scores.metrics));
  });
}

void hf_report_free(hf_report* rep) { delete rep; }

hf_status hf_evaluate_scores_file(const char* scores_path, const char* labels_path,
                                  double calibration_fraction, uint64_t calibration_seed,
                                  hf_format format, char** out) {
  HF_CHECK(scores_path != nullptr && out != nullptr, "null argument");
  return guarded([&] {
    auto reports = parse_reports(read_all(scores_path));
    if (labels_path != nullptr) {
      std::istringstream in(read_all(labels_path));
      const auto labels = read_labels_csv(in);
      for (auto& r : reports) {
        auto it = labels.find(r.query_id);
        if (it == labels.end()) continue;
        if (r.label && *r.label != it->second) {
          std::cerr << "warning: query '" << r.query_id << "': sidecar label overrides score-file label\n";
        }
        r.label = it->second;
      }
    }
    const auto metrics = evaluate_reports(reports, {calibration_fraction, calibration_seed});
    *out = dup_string(format == HF_FORMAT_CSV ? metrics_to_csv(metrics) : metrics_to_json(metrics));
  });
}

hf_status hf_diagnostics_csv(const hf_dataset* ds, const hf_config* cfg, char** out_csv) {
  HF_CHECK(ds != nullptr && cfg != nullptr && out_csv != nullptr, "null argument");
  return guarded([&] {
    *out_csv = dup_string(diagnostics_to_csv(per_delta_t_diagnostics(ds->bundles, cfg->config)));
  });
}

// ---- numerical primitives ----

hf_status hf_softmax_temperature(const double* logits, size_t n, double temperature, double* out_probs) {
  HF_CHECK(logits != nullptr && out_probs != nullptr, "null argument");
  return guarded([&] {
    const auto p = softmax_temperature(std::span<const double>(logits, n), temperature);
    std::copy(p.begin(), p.end(), out_probs);
  });
}

hf_status hf_roc_auc(const double* scores, const int* labels, size_t n, double* out_auc) {
  HF_CHECK(scores != nullptr && labels != nullptr && out_auc != nullptr, "null argument");
  return guarded([&] {
    std::vector<bool> l(n);
    for (size_t i = 0; i < n; ++i) l[i] = labels[i] != 0;
    *out_auc = roc_auc(std::span<const double>(scores, n), l);
  });
}

}  // extern "C"
