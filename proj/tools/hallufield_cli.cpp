// hallufield: command-line front end over the C API.
//
// Exit codes: 0 success, 1 validation failure, 2 usage error, 3 I/O error.
// Failures print one JSON object on stderr.

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hallufield/hallufield.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct DatasetDeleter {
  void operator()(hf_dataset* p) const { hf_dataset_free(p); }
};
struct ConfigDeleter {
  void operator()(hf_config* p) const { hf_config_free(p); }
};
struct ReportDeleter {
  void operator()(hf_report* p) const { hf_report_free(p); }
};
struct StringDeleter {
  void operator()(char* p) const { hf_string_free(p); }
};
using DatasetPtr = std::unique_ptr<hf_dataset, DatasetDeleter>;
using ConfigPtr = std::unique_ptr<hf_config, ConfigDeleter>;
using ReportPtr = std::unique_ptr<hf_report, ReportDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

void emit_error(const nlohmann::json& e) { std::cerr << e.dump() << std::endl; }

// Reports the thread's last C API error and picks the exit code.
int api_failure(hf_status status) {
  const std::string last = hf_last_error();
  nlohmann::json e = nlohmann::json::parse(last, nullptr, false);
  if (e.is_discarded() || !e.is_object()) e = {{"code", hf_status_name(status)}, {"message", last}};
  emit_error(e);
  switch (status) {
    case HF_ERR_IO: return kExitIo;
    case HF_ERR_INVALID_ARGUMENT: return kExitUsage;
    default: return kExitValidation;
  }
}

class Failure {
 public:
  explicit Failure(int code) : code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

void check(hf_status status) {
  if (status != HF_OK) throw Failure(api_failure(status));
}

std::string take(char* s) {
  StringPtr owned(s);
  return owned ? std::string(owned.get()) : std::string();
}

hf_format parse_format(const std::string& name) { return name == "csv" ? HF_FORMAT_CSV : HF_FORMAT_JSON; }

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    std::cout.flush();
    if (!std::cout) {
      emit_error({{"code", "IoError"}, {"message", "failed writing to stdout"}});
      throw Failure(kExitIo);
    }
    return;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr || std::fwrite(text.data(), 1, text.size(), f) != text.size()) {
    if (f != nullptr) std::fclose(f);
    emit_error({{"code", "IoError"}, {"message", "cannot write '" + path + "'"}});
    throw Failure(kExitIo);
  }
  std::fclose(f);
}

ConfigPtr load_config(const std::string& path) {
  hf_config* cfg = nullptr;
  check(path.empty() ? hf_config_default(&cfg) : hf_config_load(path.c_str(), &cfg));
  return ConfigPtr(cfg);
}

// Reads traces, rejects the input on any parse issue, applies a label sidecar.
DatasetPtr load_traces(const std::string& path, const std::string& labels) {
  hf_dataset* raw = nullptr;
  check(hf_dataset_read_traces(path.c_str(), &raw));
  DatasetPtr ds(raw);
  if (hf_dataset_issue_count(ds.get()) > 0) {
    char* issues = nullptr;
    check(hf_dataset_issues_json(ds.get(), &issues));
    emit_error({{"code", "ParseError"},
                {"message", "trace input has schema problems"},
                {"issues", nlohmann::json::parse(take(issues))}});
    throw Failure(kExitValidation);
  }
  if (!labels.empty()) check(hf_dataset_apply_labels(ds.get(), labels.c_str(), nullptr));
  return ds;
}

struct SimulateArgs {
  std::size_t queries = 200;
  std::size_t vocab = 16;
  std::size_t max_len = 50;
  double base_temp = 0.5;
  std::vector<double> delta_ts{0.5, 1.0, 1.5};
  std::size_t samples = 50;
  std::uint64_t seed = 0;
  double sharpness_low = 1.0;
  double sharpness_high = 4.0;
  bool no_clusters = false;
  std::string out = "-";
  std::string labels_out;
};

int run_simulate(const SimulateArgs& a) {
  hf_simulation_params p;
  hf_simulation_params_default(&p);
  p.n_queries = a.queries;
  p.vocab_size = a.vocab;
  p.max_len = a.max_len;
  p.base_temperature = a.base_temp;
  p.delta_ts = a.delta_ts.data();
  p.n_delta_ts = a.delta_ts.size();
  p.samples_per_delta_t = a.samples;
  p.seed = a.seed;
  p.sharpness_low = a.sharpness_low;
  p.sharpness_high = a.sharpness_high;
  p.assign_clusters = a.no_clusters ? 0 : 1;

  hf_dataset* raw = nullptr;
  check(hf_dataset_simulate(&p, &raw));
  DatasetPtr ds(raw);
  check(hf_dataset_write_traces(ds.get(), a.out.c_str()));
  if (!a.labels_out.empty()) check(hf_dataset_write_labels(ds.get(), a.labels_out.c_str()));
  return kExitOk;
}

struct ScoreArgs {
  std::string traces;
  std::string config;
  std::string labels;
  std::string out = "-";
  std::string format = "json";
  double calibration_frac = 0.5;
  std::uint64_t calibration_seed = 0;
};

int run_score(const ScoreArgs& a) {
  auto cfg = load_config(a.config);
  auto ds = load_traces(a.traces, a.labels);
  hf_report* raw = nullptr;
  check(hf_score(ds.get(), cfg.get(), a.calibration_frac, a.calibration_seed, &raw));
  ReportPtr rep(raw);
  check(hf_report_write(rep.get(), a.out.c_str(), parse_format(a.format)));
  if (hf_report_failure_count(rep.get()) > 0) {
    char* failures = nullptr;
    check(hf_report_failures_json(rep.get(), &failures));
    const auto list = nlohmann::json::parse(take(failures));
    emit_error({{"code", list.front().value("code", "ScoreFailure")},
                {"message", std::to_string(list.size()) + " queries failed to score"},
                {"failures", list}});
    return kExitValidation;
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string scores;
  std::string traces;
  std::string labels;
  std::string config;
  std::string out = "-";
  std::string format = "json";
  double calibration_frac = 0.5;
  std::uint64_t calibration_seed = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  std::string text;
  if (!a.scores.empty()) {
    char* metrics = nullptr;
    check(hf_evaluate_scores_file(a.scores.c_str(), a.labels.empty() ? nullptr : a.labels.c_str(),
                                  a.calibration_frac, a.calibration_seed, parse_format(a.format),
                                  &metrics));
    text = take(metrics);
  } else {
    auto cfg = load_config(a.config);
    auto ds = load_traces(a.traces, a.labels);
    hf_report* raw = nullptr;
    check(hf_score(ds.get(), cfg.get(), a.calibration_frac, a.calibration_seed, &raw));
    ReportPtr rep(raw);
    char* metrics = nullptr;
    check(hf_report_metrics(rep.get(), parse_format(a.format), &metrics));
    text = take(metrics);
  }
  write_text(a.out, text);
  return kExitOk;
}

struct DiagnosticsArgs {
  std::string traces;
  std::string config;
  std::string labels;
  std::string out = "-";
};

int run_diagnostics(const DiagnosticsArgs& a) {
  auto cfg = load_config(a.config);
  auto ds = load_traces(a.traces, a.labels);
  char* csv = nullptr;
  check(hf_diagnostics_csv(ds.get(), cfg.get(), &csv));
  write_text(a.out, take(csv));
  return kExitOk;
}

struct ValidateArgs {
  std::string traces;
  std::size_t max_tokens = 50;
};

int run_validate(const ValidateArgs& a) {
  hf_dataset* raw = nullptr;
  check(hf_dataset_read_traces(a.traces.c_str(), &raw));
  DatasetPtr ds(raw);
  char* violations = nullptr;
  std::size_t count = 0;
  check(hf_dataset_validate(ds.get(), a.max_tokens, &violations, &count));
  const std::string list = take(violations);
  if (count > 0) {
    emit_error({{"code", "ValidationFailed"},
                {"message", std::to_string(count) + " violations"},
                {"violations", nlohmann::json::parse(list)}});
    return kExitValidation;
  }
  std::cout << "{\"queries\":" << hf_dataset_size(ds.get()) << ",\"violations\":0}\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hallucination signatures from token-probability traces"};
  app.set_version_flag("--version", std::string(hf_version()));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic labelled trace file from the toy model");
  simulate->add_option("--queries", sim.queries, "Number of queries (even)")->capture_default_str();
  simulate->add_option("--vocab", sim.vocab, "Toy vocabulary size")->capture_default_str();
  simulate->add_option("--max-len", sim.max_len, "Token cap per generation")->capture_default_str();
  simulate->add_option("--base-temp", sim.base_temp, "Base temperature T0")->capture_default_str();
  simulate->add_option("--delta-ts", sim.delta_ts, "Comma-separated temperature increments")
      ->delimiter(',')
      ->capture_default_str();
  simulate->add_option("--samples", sim.samples, "Samples L per delta_t")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Dataset seed")->capture_default_str();
  simulate->add_option("--sharpness-low", sim.sharpness_low, "Sharpness of hallucination-prone queries")
      ->capture_default_str();
  simulate->add_option("--sharpness-high", sim.sharpness_high, "Sharpness of well-known queries")
      ->capture_default_str();
  simulate->add_flag("--no-clusters", sim.no_clusters, "Do not attach cluster ids");
  simulate->add_option("--out", sim.out, "Trace output path ('-' = stdout)")->capture_default_str();
  simulate->add_option("--labels-out", sim.labels_out, "Also write a query_id,label CSV");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "Score every query of a trace file");
  score->add_option("--traces", sc.traces, "Trace file ('-' = stdin)")->required();
  score->add_option("--config", sc.config, "Score config JSON");
  score->add_option("--labels", sc.labels, "query_id,label sidecar CSV");
  score->add_option("--out", sc.out, "Output path ('-' = stdout)")->capture_default_str();
  score->add_option("--format", sc.format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  score->add_option("--calibration-frac", sc.calibration_frac)->capture_default_str();
  score->add_option("--calibration-seed", sc.calibration_seed)->capture_default_str();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "AUC and accuracy per method");
  auto* scores_opt = evaluate->add_option("--scores", ev.scores, "Score file from `score` ('-' = stdin)");
  auto* traces_opt = evaluate->add_option("--traces", ev.traces, "Trace file to score first");
  scores_opt->excludes(traces_opt);
  evaluate->add_option("--labels", ev.labels, "query_id,label sidecar CSV");
  evaluate->add_option("--config", ev.config, "Score config JSON (with --traces)");
  evaluate->add_option("--calibration-frac", ev.calibration_frac)->capture_default_str();
  evaluate->add_option("--calibration-seed", ev.calibration_seed)->capture_default_str();
  evaluate->add_option("--out", ev.out, "Output path ('-' = stdout)")->capture_default_str();
  evaluate->add_option("--format", ev.format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  DiagnosticsArgs dg;
  auto* diagnostics = app.add_subcommand("diagnostics", "Per-delta_t class means and AUCs as CSV");
  diagnostics->add_option("--traces", dg.traces, "Trace file ('-' = stdin)")->required();
  diagnostics->add_option("--config", dg.config, "Score config JSON");
  diagnostics->add_option("--labels", dg.labels, "query_id,label sidecar CSV");
  diagnostics->add_option("--out", dg.out, "Output path ('-' = stdout)")->capture_default_str();

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "Schema and invariant check; exit 0 iff clean");
  validate->add_option("--traces", va.traces, "Trace file ('-' = stdin)")->required();
  validate->add_option("--max-tokens", va.max_tokens, "Token cap per generation")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error({{"code", "UsageError"}, {"message", e.what()}});
    return kExitUsage;
  }
  if (evaluate->parsed() && ev.scores.empty() && ev.traces.empty()) {
    emit_error({{"code", "UsageError"}, {"message", "evaluate needs --scores or --traces"}});
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (score->parsed()) return run_score(sc);
    if (evaluate->parsed()) return run_evaluate(ev);
    if (diagnostics->parsed()) return run_diagnostics(dg);
    if (validate->parsed()) return run_validate(va);
  } catch (const Failure& f) {
    return f.code();
  }
  return kExitUsage;
}
