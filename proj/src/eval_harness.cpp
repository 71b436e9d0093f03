#include "hallufield/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hallufield/error.hpp"
#include "hallufield/semantic_entropy.hpp"
#include "hallufield/toy_lm.hpp"
#include "hallufield/variations.hpp"

namespace hallufield {

double roc_auc(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw_domain("roc_auc: scores and labels differ in size");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of mid-ranks (1-based) of the positives.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw_domain("roc_auc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

AccuracyResult accuracy_with_calibrated_threshold(std::span<const double> scores,
                                                  const std::vector<bool>& labels,
                                                  double calibration_fraction,
                                                  std::uint64_t seed) {
  if (scores.size() != labels.size()) throw_domain("accuracy: scores and labels differ in size");
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw_domain("accuracy: calibration fraction must be in (0, 1)");
  }
  const std::size_t n = scores.size();
  const auto n_cal = static_cast<std::size_t>(std::llround(calibration_fraction * static_cast<double>(n)));
  if (n_cal == 0 || n_cal >= n) throw_domain("accuracy: degenerate calibration split");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.next_u64() % i)]);
  }

  std::vector<std::size_t> cal(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_cal));
  std::sort(cal.begin(), cal.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t cal_pos = 0;
  for (auto i : cal) cal_pos += labels[i] ? 1 : 0;
  const std::size_t cal_neg = n_cal - cal_pos;
  if (cal_pos == 0 || cal_neg == 0) throw_domain("accuracy: calibration split lacks a class");

  // Sweep thresholds from below the minimum upward. Below group g, everything
  // from g on is predicted positive.
  auto balanced = [&](std::size_t pos_above, std::size_t neg_above) {
    const double tpr = static_cast<double>(pos_above) / static_cast<double>(cal_pos);
    const double tnr = static_cast<double>(cal_neg - neg_above) / static_cast<double>(cal_neg);
    return 0.5 * (tpr + tnr);
  };
  double best_threshold = scores[cal.front()] - 1.0;
  double best = balanced(cal_pos, cal_neg);
  std::size_t pos_above = cal_pos, neg_above = cal_neg;
  for (std::size_t i = 0; i < n_cal;) {
    std::size_t j = i;
    while (j < n_cal && scores[cal[j]] == scores[cal[i]]) {
      if (labels[cal[j]]) --pos_above; else --neg_above;
      ++j;
    }
    const double t = j < n_cal ? 0.5 * (scores[cal[i]] + scores[cal[j]]) : scores[cal[i]] + 1.0;
    const double b = balanced(pos_above, neg_above);
    if (b > best) {
      best = b;
      best_threshold = t;
    }
    i = j;
  }

  std::size_t correct = 0;
  for (std::size_t k = n_cal; k < n; ++k) {
    const std::size_t i = idx[k];
    correct += ((scores[i] > best_threshold) == labels[i]) ? 1 : 0;
  }
  AccuracyResult r;
  r.threshold = best_threshold;
  r.n_calibration = n_cal;
  r.n_test = n - n_cal;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_test);
  return r;
}

ScoreReport score_bundle(const QueryBundle& bundle, const ScoreConfig& config) {
  ScoreReport report;
  report.query_id = bundle.query_id;
  report.label = bundle.label;
  try {
    const auto energy = total_internal_energy_variation(bundle, config);
    report.per_delta_t = energy.per_delta_t;
    report.delta_f = energy.delta_f;
    report.delta_th_total = energy.delta_th;
    report.delta_u = energy.delta_u;

    const GenerationPool pool = collect_generations(bundle, config.se_sequence_prob);
    report.se_excluded = pool.unclustered;
    report.baselines["re"] = regular_entropy(pool.logprobs);
    if (!pool.clustered.empty()) {
      const auto se = semantic_entropy(pool.clustered);
      report.se = se.value;
      report.se_uniform_fallback = se.uniform_fallback;
      report.hallufield_se = hallufield_se_score(report.delta_u, se.value, config.lambda);
      report.baselines["ce"] = cluster_assignment_entropy(pool.cluster_labels);
    }
  } catch (const Error& e) {
    ScoreReport failed;
    failed.query_id = bundle.query_id;
    failed.label = bundle.label;
    failed.failure = ScoreFailure{std::string(error_code_name(e.code())), e.what(), e.detail()};
    return failed;
  }
  return report;
}

DatasetScores score_dataset(std::span<const QueryBundle> bundles, const ScoreConfig& config,
                            const EvalOptions& options) {
  validate_config(config);
  DatasetScores out;
  out.reports.reserve(bundles.size());
  for (const auto& b : bundles) out.reports.push_back(score_bundle(b, config));
  std::stable_sort(out.reports.begin(), out.reports.end(),
                   [](const ScoreReport& a, const ScoreReport& b) { return a.query_id < b.query_id; });
  out.metrics = evaluate_reports(out.reports, options);
  return out;
}

namespace {

template <typename Signal>
std::optional<MetricRow> metric_row(const char* method, std::span<const ScoreReport> reports,
                                    const EvalOptions& options, Signal&& signal) {
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& r : reports) {
    if (!r.ok() || !r.label) continue;
    const std::optional<double> s = signal(r);
    if (!s) continue;
    scores.push_back(*s);
    labels.push_back(*r.label);
  }
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (n_pos == 0 || n_pos == labels.size()) return std::nullopt;

  MetricRow row;
  row.method = method;
  row.n = scores.size();
  row.auc = roc_auc(scores, labels);
  try {
    const auto acc = accuracy_with_calibrated_threshold(scores, labels, options.calibration_fraction,
                                                        options.calibration_seed);
    row.accuracy = acc.accuracy;
    row.threshold = acc.threshold;
  } catch (const Error&) {
  }
  return row;
}

std::optional<double> baseline(const ScoreReport& r, const char* name) {
  auto it = r.baselines.find(name);
  if (it == r.baselines.end()) return std::nullopt;
  return it->second;
}

}  // namespace

std::vector<MetricRow> evaluate_reports(std::span<const ScoreReport> reports,
                                        const EvalOptions& options) {
  std::vector<MetricRow> rows;
  auto push = [&](std::optional<MetricRow> row) {
    if (row) rows.push_back(std::move(*row));
  };
  push(metric_row(kMethodHalluField, reports, options,
                  [](const ScoreReport& r) -> std::optional<double> { return r.delta_u; }));
  push(metric_row(kMethodHalluFieldSE, reports, options,
                  [](const ScoreReport& r) { return r.hallufield_se; }));
  push(metric_row(kMethodRE, reports, options,
                  [](const ScoreReport& r) { return baseline(r, "re"); }));
  push(metric_row(kMethodCE, reports, options,
                  [](const ScoreReport& r) { return baseline(r, "ce"); }));
  return rows;
}

namespace {

SignatureStats signature_stats(const std::vector<double>& values, const std::vector<bool>& labels) {
  SignatureStats s;
  double pos = 0.0, neg = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (labels[i]) {
      pos += values[i];
      ++n_pos;
    } else {
      neg += values[i];
      ++n_neg;
    }
  }
  s.mean_hallucinated = pos / static_cast<double>(n_pos);
  s.mean_non_hallucinated = neg / static_cast<double>(n_neg);
  s.difference = s.mean_hallucinated - s.mean_non_hallucinated;
  s.auc = roc_auc(values, labels);
  return s;
}

}  // namespace

std::vector<DiagnosticsRow> per_delta_t_diagnostics(std::span<const ScoreReport> reports) {
  std::vector<const ScoreReport*> used;
  for (const auto& r : reports) {
    if (r.ok() && r.label) used.push_back(&r);
  }
  if (used.empty()) throw_domain("diagnostics need labelled, scored queries");
  std::vector<bool> labels;
  for (const auto* r : used) labels.push_back(*r->label);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (n_pos == 0 || n_pos == labels.size()) throw_domain("diagnostics need both classes");

  std::vector<DiagnosticsRow> rows;
  const auto& grid = used.front()->per_delta_t;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::vector<double> b, p, th;
    for (const auto* r : used) {
      if (r->per_delta_t.size() != grid.size() ||
          std::abs(r->per_delta_t[k].delta_t - grid[k].delta_t) > kTemperatureTolerance) {
        throw_domain("diagnostics: reports disagree on the delta_t grid");
      }
      b.push_back(r->per_delta_t[k].delta_b);
      p.push_back(r->per_delta_t[k].delta_p);
      th.push_back(r->per_delta_t[k].delta_th);
    }
    DiagnosticsRow row;
    row.delta_t = grid[k].delta_t;
    row.base = signature_stats(b, labels);
    row.potential = signature_stats(p, labels);
    row.temperature_entropy = signature_stats(th, labels);
    row.n_hallucinated = n_pos;
    row.n_non_hallucinated = labels.size() - n_pos;
    rows.push_back(row);
  }
  return rows;
}

std::vector<DiagnosticsRow> per_delta_t_diagnostics(std::span<const QueryBundle> bundles,
                                                    const ScoreConfig& config) {
  validate_config(config);
  std::vector<ScoreReport> reports;
  reports.reserve(bundles.size());
  for (const auto& b : bundles) reports.push_back(score_bundle(b, config));
  return per_delta_t_diagnostics(reports);
}

}  // namespace hallufield
