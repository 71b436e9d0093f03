#pragma once

// Semantic entropy over externally supplied cluster labels, plus the
// regular-entropy (RE) and cluster-assignment-entropy (CE) baselines.

#include <cstdint>
#include <span>
#include <vector>

#include "hallufield/trace_model.hpp"

namespace hallufield {

struct ClusteredGeneration {
  double sequence_logprob = 0.0;  // log P(s | Q), <= 0
  std::int64_t cluster = 0;
};

struct SemanticEntropyResult {
  double value = 0.0;
  std::size_t clusters = 0;
  /// Every cluster mass was zero; entropy is that of the uniform distribution.
  bool uniform_fallback = false;
};

/// Joint log-probability of the path, or its per-token mean.
/// Throws Error(Domain) on an empty path.
double sequence_logprob(const GenerationRecord& record, SequenceProbMode mode);

/// -sum_C p_C ln p_C with cluster masses renormalized over the observed
/// clusters (log-sum-exp). Throws Error(Domain) on empty input or a negative
/// cluster id.
SemanticEntropyResult semantic_entropy(std::span<const ClusteredGeneration> items);

/// Entropy of the empirical cluster-frequency distribution.
double cluster_assignment_entropy(std::span<const std::int64_t> labels);

/// Monte Carlo predictive entropy: -(1/M) sum log P(s | Q).
double regular_entropy(std::span<const double> logprobs);

/// Generations of one query feeding the SE, RE and CE signals: the base
/// record followed by every perturbed record in ascending delta_t order.
struct GenerationPool {
  std::vector<double> logprobs;                // every generation
  std::vector<ClusteredGeneration> clustered;  // generations carrying a cluster id
  std::vector<std::int64_t> cluster_labels;
  std::size_t unclustered = 0;
};

GenerationPool collect_generations(const QueryBundle& bundle, SequenceProbMode mode);

}  // namespace hallufield
