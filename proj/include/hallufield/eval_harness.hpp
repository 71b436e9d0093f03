#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hallufield/trace_model.hpp"

namespace hallufield {

inline constexpr const char* kMethodHalluField = "HalluField";
inline constexpr const char* kMethodHalluFieldSE = "HalluFieldSE";
inline constexpr const char* kMethodRE = "RE";
inline constexpr const char* kMethodCE = "CE";

struct MetricRow {
  std::string method;
  double auc = 0.5;
  /// Absent when the calibration split cannot hold both classes.
  std::optional<double> accuracy;
  std::optional<double> threshold;
  std::size_t n = 0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// Mann-Whitney AUC with mid-ranks: P(score_pos > score_neg) + P(tie) / 2.
/// `labels[i]` true marks a positive (hallucinated) example. Throws
/// Error(Domain) on a size mismatch or when either class is missing.
double roc_auc(std::span<const double> scores, const std::vector<bool>& labels);

struct AccuracyResult {
  double accuracy = 0.0;
  double threshold = 0.0;
  std::size_t n_calibration = 0;
  std::size_t n_test = 0;
};

/// Splits the examples with a seeded shuffle, picks the threshold maximizing
/// balanced accuracy on the first `calibration_fraction` of them (predict
/// positive when score > threshold; candidates are midpoints between
/// consecutive distinct scores plus one sentinel on each side; ties go to the
/// smaller threshold) and reports plain accuracy on the rest.
AccuracyResult accuracy_with_calibrated_threshold(std::span<const double> scores,
                                                  const std::vector<bool>& labels,
                                                  double calibration_fraction = 0.5,
                                                  std::uint64_t seed = 0);

struct EvalOptions {
  double calibration_fraction = 0.5;
  std::uint64_t calibration_seed = 0;
};

/// Scores one bundle. Failures (missing delta_t, unavailable mode, ...) are
/// recorded in ScoreReport::failure rather than thrown.
ScoreReport score_bundle(const QueryBundle& bundle, const ScoreConfig& config);

struct DatasetScores {
  std::vector<ScoreReport> reports;  // sorted by query_id
  std::vector<MetricRow> metrics;
};

/// Throws Error(Domain) only for an invalid config.
DatasetScores score_dataset(std::span<const QueryBundle> bundles, const ScoreConfig& config,
                            const EvalOptions& options = {});

/// One row per method whose signal is present on labelled, successfully
/// scored reports of both classes. Methods without inputs produce no row.
std::vector<MetricRow> evaluate_reports(std::span<const ScoreReport> reports,
                                        const EvalOptions& options = {});

struct SignatureStats {
  double mean_hallucinated = 0.0;
  double mean_non_hallucinated = 0.0;
  double difference = 0.0;  // hallucinated - non-hallucinated
  double auc = 0.5;
};

struct DiagnosticsRow {
  double delta_t = 0.0;
  SignatureStats base;
  SignatureStats potential;
  SignatureStats temperature_entropy;
  std::size_t n_hallucinated = 0;
  std::size_t n_non_hallucinated = 0;
};

/// Per-delta_t class means, mean differences and single-signature AUCs of the
/// three variations, over labelled successful reports. Throws Error(Domain)
/// unless both classes are present.
std::vector<DiagnosticsRow> per_delta_t_diagnostics(std::span<const ScoreReport> reports);

std::vector<DiagnosticsRow> per_delta_t_diagnostics(std::span<const QueryBundle> bundles,
                                                    const ScoreConfig& config);

}  // namespace hallufield
