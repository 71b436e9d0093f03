#include "hallufield/semantic_entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "hallufield/error.hpp"
#include "numeric.hpp"

namespace hallufield {

double sequence_logprob(const GenerationRecord& record, SequenceProbMode mode) {
  if (record.steps.empty()) throw_domain("sequence_logprob: empty token path");
  detail::CompensatedSum sum;
  for (const auto& s : record.steps) sum.add(s.logp);
  const double total = std::min(0.0, sum.value());
  return mode == SequenceProbMode::JointProduct ? total
                                                : total / static_cast<double>(record.steps.size());
}

SemanticEntropyResult semantic_entropy(std::span<const ClusteredGeneration> items) {
  if (items.empty()) throw_domain("semantic_entropy: no generations");

  // cluster -> member log-probabilities
  std::map<std::int64_t, std::vector<double>> members;
  for (const auto& it : items) {
    if (it.cluster < 0) throw_domain("semantic_entropy: negative cluster id");
    members[it.cluster].push_back(it.sequence_logprob);
  }

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  auto logsumexp = [](const std::vector<double>& xs) {
    const double top = *std::max_element(xs.begin(), xs.end());
    if (top == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - top);
    return top + std::log(s);
  };

  std::vector<double> log_mass;
  log_mass.reserve(members.size());
  for (const auto& [cluster, lps] : members) log_mass.push_back(logsumexp(lps));

  SemanticEntropyResult result;
  result.clusters = log_mass.size();
  const double log_total = logsumexp(log_mass);
  if (log_total == kNegInf) {
    result.uniform_fallback = true;
    result.value = std::log(static_cast<double>(result.clusters));
    return result;
  }
  double h = 0.0;
  for (double lm : log_mass) {
    if (lm == kNegInf) continue;
    const double log_p = lm - log_total;
    h -= std::exp(log_p) * log_p;
  }
  result.value = std::max(0.0, h);
  return result;
}

double cluster_assignment_entropy(std::span<const std::int64_t> labels) {
  if (labels.empty()) throw_domain("cluster_assignment_entropy: no labels");
  std::map<std::int64_t, std::size_t> counts;
  for (auto l : labels) ++counts[l];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const auto& [label, c] : counts) h -= detail::xlogx(static_cast<double>(c) / n);
  return std::max(0.0, h);
}

double regular_entropy(std::span<const double> logprobs) {
  if (logprobs.empty()) throw_domain("regular_entropy: no generations");
  detail::CompensatedSum sum;
  for (double lp : logprobs) sum.add(lp);
  return -sum.value() / static_cast<double>(logprobs.size());
}

GenerationPool collect_generations(const QueryBundle& bundle, SequenceProbMode mode) {
  GenerationPool pool;
  auto add = [&](const GenerationRecord& r) {
    const double lp = sequence_logprob(r, mode);
    pool.logprobs.push_back(lp);
    if (r.cluster) {
      pool.clustered.push_back({lp, *r.cluster});
      pool.cluster_labels.push_back(*r.cluster);
    } else {
      ++pool.unclustered;
    }
  };
  add(bundle.base);
  for (const auto& [dt, records] : bundle.perturbations) {
    for (const auto& r : records) add(r);
  }
  return pool;
}

}  // namespace hallufield
