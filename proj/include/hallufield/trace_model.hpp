#pragma once

// Domain types for recorded token-probability traces, the per-query bundle
// assembled from them, scoring configuration and score reports.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hallufield {

inline constexpr double kLogpTolerance = 1e-9;
inline constexpr double kTemperatureTolerance = 1e-9;
inline constexpr std::size_t kDefaultMaxTokens = 50;

/// One (token, value) pair of a stored candidate list. `value` is a natural
/// log-probability in `TokenStep::topk` and a raw logit in
/// `TokenStep::raw_logits_topk`.
struct Candidate {
  std::int64_t token = 0;
  double value = 0.0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct TokenStep {
  std::int64_t token_id = 0;
  /// 1-based likelihood rank; 1 is the most likely token.
  std::int64_t rank = 1;
  /// log P(token | prefix) at the generation temperature.
  double logp = 0.0;
  /// Most likely candidates, log-probabilities non-increasing.
  std::vector<Candidate> topk;
  /// Pre-temperature logits for the same candidate set, when recorded.
  std::optional<std::vector<Candidate>> raw_logits_topk;
  /// Unknown JSON members carried through ingestion, as a compact object.
  std::string extras;

  friend bool operator==(const TokenStep&, const TokenStep&) = default;
};

enum class Role { Base, Perturbation };

struct GenerationRecord {
  std::string query_id;
  Role role = Role::Base;
  double temperature = 0.0;
  double delta_t = 0.0;
  std::int64_t sample_index = 0;
  std::int64_t seed = 0;
  std::vector<TokenStep> steps;
  std::optional<std::int64_t> cluster;
  /// Ground-truth label; only meaningful on base records.
  std::optional<bool> label;
  std::string extras;

  std::size_t length() const noexcept { return steps.size(); }

  friend bool operator==(const GenerationRecord&, const GenerationRecord&) = default;
};

struct QueryBundle {
  std::string query_id;
  GenerationRecord base;
  /// delta_t -> L records sampled at base.temperature + delta_t.
  std::map<double, std::vector<GenerationRecord>> perturbations;
  std::optional<bool> label;

  /// Records stored under a delta_t key within kTemperatureTolerance, or
  /// nullptr when absent.
  const std::vector<GenerationRecord>* find_perturbations(double delta_t) const;

  double base_temperature() const noexcept { return base.temperature; }

  friend bool operator==(const QueryBundle&, const QueryBundle&) = default;
};

enum class Normalization { PerTokenMean, Sum };
enum class EntropyTail { LumpResidual, RenormalizeTopk };
enum class BaseVariationMode { SampledMean, ExactRescale };
enum class PathEquality { TokenSequence, RankVector };
enum class SequenceProbMode { JointProduct, LengthNormalized };

/// w(T0, dT) = scale * (T0 + dT)^exponent
struct WeightTerm {
  double exponent = 1.0;
  double scale = 1.0;

  friend bool operator==(const WeightTerm&, const WeightTerm&) = default;
};

struct WeightSchedule {
  WeightTerm base{1.0, 1.0};
  WeightTerm potential{-2.0, 1.0};
  WeightTerm temperature_entropy{-2.0, 1.0};

  friend bool operator==(const WeightSchedule&, const WeightSchedule&) = default;
};

struct ScoreConfig {
  /// Used by the simulator; scoring reads T0 from each base record.
  double base_temperature = 0.5;
  /// Perturbed temperatures 1.0, 1.5, 2.0 over the default base.
  std::vector<double> delta_ts{0.5, 1.0, 1.5};
  double lambda = 2.0;
  Normalization normalization = Normalization::PerTokenMean;
  EntropyTail entropy_tail = EntropyTail::LumpResidual;
  BaseVariationMode base_variation_mode = BaseVariationMode::SampledMean;
  PathEquality path_equality = PathEquality::TokenSequence;
  SequenceProbMode se_sequence_prob = SequenceProbMode::JointProduct;
  WeightSchedule weights;
  std::size_t max_tokens = kDefaultMaxTokens;

  friend bool operator==(const ScoreConfig&, const ScoreConfig&) = default;
};

/// Throws Error(Domain) when delta_ts is not strictly positive and strictly
/// increasing, or lambda <= 0.
void validate_config(const ScoreConfig& config);

struct VariationTriple {
  double delta_t = 0.0;
  double delta_b = 0.0;
  double delta_p = 0.0;
  double delta_th = 0.0;

  friend bool operator==(const VariationTriple&, const VariationTriple&) = default;
};

struct ScoreFailure {
  std::string code;
  std::string message;
  std::string detail;  // JSON, may be empty

  friend bool operator==(const ScoreFailure&, const ScoreFailure&) = default;
};

struct ScoreReport {
  std::string query_id;
  std::vector<VariationTriple> per_delta_t;
  double delta_f = 0.0;
  double delta_th_total = 0.0;
  double delta_u = 0.0;
  std::optional<double> se;
  std::optional<double> hallufield_se;
  /// "re", "ce" when computable.
  std::map<std::string, double> baselines;
  std::optional<bool> label;
  /// Generations left out of the semantic-entropy pool for lack of a cluster.
  std::size_t se_excluded = 0;
  bool se_uniform_fallback = false;
  std::optional<ScoreFailure> failure;

  bool ok() const noexcept { return !failure.has_value(); }

  friend bool operator==(const ScoreReport&, const ScoreReport&) = default;
};

struct Violation {
  std::string code;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// Every structural invariant violated by `bundle`. Pure; empty means valid.
std::vector<Violation> validate_bundle(const QueryBundle& bundle,
                                       std::size_t max_tokens = kDefaultMaxTokens);

std::vector<Violation> validate_record(const GenerationRecord& record,
                                       std::size_t max_tokens = kDefaultMaxTokens);

std::string_view role_name(Role role) noexcept;

}  // namespace hallufield
