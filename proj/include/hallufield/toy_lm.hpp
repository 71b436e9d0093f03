#pragma once

// Tabular order-1 autoregressive model with temperature sampling. It
// synthesizes labelled query bundles in the trace format and can enumerate
// its own path distribution exactly for short horizons.
//
// Reproducibility: all randomness comes from Rng, a std::mt19937_64 whose raw
// 64-bit outputs are mapped to doubles as (x >> 11) * 2^-53 and to normals by
// Box-Muller; no <random> distributions are used, so traces are identical
// across standard libraries. Derived seeds use mix_seed().

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hallufield/trace_model.hpp"

namespace hallufield {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// splitmix64(seed ^ splitmix64(stream)), truncated to 63 bits so that seeds
/// stay representable as non-negative JSON integers.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Inverse-CDF draw from `probs` given u in [0, 1). Falls back to the last
/// index with positive probability when rounding leaves u above the total.
std::size_t sample_categorical(std::span<const double> probs, double u);

struct ToyModel {
  std::size_t vocab_size = 16;
  std::int64_t eos_token = 0;
  std::size_t max_len = kDefaultMaxTokens;
  /// vocab_size x vocab_size, row-major; row = previous token.
  std::vector<double> transition_logits;

  std::span<const double> row(std::int64_t prev) const;

  /// Throws Error(Domain) on shape mismatch, non-finite logits or a bad eos id.
  void check() const;

  /// Gaussian transition logits, one boosted "preferred" successor per row
  /// and a lowered end-of-sequence logit.
  static ToyModel random(std::size_t vocab_size, std::uint64_t seed, double peak_boost = 3.0,
                         std::size_t max_len = kDefaultMaxTokens);
};

struct SyntheticQuerySpec {
  std::string query_id;
  /// Multiplies every logit; high = peaked "known answer", low = flat.
  double sharpness = 1.0;
  /// true = hallucination-prone (sharpness below the dataset threshold).
  bool label = false;
  /// Logits of the first token, length vocab_size.
  std::vector<double> initial_logits;
};

/// Autoregressive sampling from softmax(sharpness * logits / T) until eos or
/// max_len. Each step records the true rank, exact logp, the full candidate
/// list and the raw (sharpness-scaled) logits. T = 0 decodes greedily and
/// keeps only the argmax in topk. Deterministic in (model, spec, T, seed).
GenerationRecord generate(const ToyModel& model, const SyntheticQuerySpec& spec,
                          double temperature, std::int64_t seed);

/// Logits of the next token after `prefix` (sharpness applied).
std::vector<double> next_token_logits(const ToyModel& model, const SyntheticQuerySpec& spec,
                                      std::span<const std::int64_t> prefix);

struct DatasetParams {
  std::size_t n_queries = 200;
  double sharpness_low = 1.0;
  double sharpness_high = 4.0;
  double base_temperature = 0.5;
  std::vector<double> delta_ts{0.5, 1.0, 1.5};
  std::size_t samples_per_delta_t = 50;
  std::uint64_t seed = 0;
  /// Tag each generation with its first token as a semantic-cluster stand-in.
  bool assign_clusters = true;
  double peak_boost = 3.0;
};

/// Query `index` of a dataset: even indices are low-sharpness (label true),
/// odd indices high-sharpness (label false).
SyntheticQuerySpec make_query_spec(const ToyModel& model, const DatasetParams& params,
                                   std::size_t index);

/// One base record at T0 and L records per delta_t for each query. Throws
/// Error(Domain) for an odd query count, bad delta_t set or sharpness <= 0.
std::vector<QueryBundle> make_dataset(const ToyModel& model, const DatasetParams& params);

/// One complete token path with its exact probability under the model.
struct PathOutcome {
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> ranks;
  std::vector<double> step_logps;
  std::vector<double> step_entropies;
  double probability = 0.0;

  double free_energy(Normalization normalization) const;
  double entropy(Normalization normalization) const;
};

struct PathDistribution {
  double temperature = 0.0;
  std::vector<PathOutcome> paths;

  double total_probability() const;
};

inline constexpr std::size_t kMaxEnumeratedPaths = 1'000'000;

/// Every token path of length <= horizon (ending at eos or at the horizon) at
/// temperature T > 0. Throws Error(EnumerationTooLarge) when
/// vocab_size^horizon exceeds kMaxEnumeratedPaths.
PathDistribution brute_force_expectations(const ToyModel& model, const SyntheticQuerySpec& spec,
                                          double temperature, std::size_t horizon);

/// Exact expectations of the three variations for a fixed base path, taking
/// the sampling distribution at T0 + delta_t to be `perturbed`. Entropies use
/// the full next-token distribution, matching records emitted by generate().
VariationTriple exact_variations(const PathDistribution& perturbed, const GenerationRecord& base,
                                 const ScoreConfig& config);

}  // namespace hallufield
