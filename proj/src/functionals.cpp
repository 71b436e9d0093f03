#include "hallufield/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hallufield/error.hpp"
#include "numeric.hpp"

namespace hallufield {

StepDistribution StepDistribution::from_step(const TokenStep& step) {
  StepDistribution dist;
  dist.probs.reserve(step.topk.size());
  double total = 0.0;
  for (const auto& c : step.topk) {
    const double p = std::exp(c.value);
    dist.probs.push_back({c.token, p});
    total += p;
  }
  dist.residual_mass = std::max(0.0, 1.0 - total);
  return dist;
}

std::vector<double> softmax_temperature(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw_domain("softmax: empty logit vector");
  if (std::isnan(temperature) || temperature < 0.0) throw_domain("softmax: temperature must be >= 0");
  for (double l : logits) {
    if (!std::isfinite(l)) throw_domain("softmax: logits must be finite");
  }

  const auto argmax = std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size(), 0.0);
  if (temperature == 0.0) {
    out[static_cast<std::size_t>(argmax - logits.begin())] = 1.0;
    return out;
  }

  const double top = *argmax;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isinf(temperature) ? 1.0 : std::exp((logits[i] - top) / temperature);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

double token_free_energy(double logp) {
  if (std::isnan(logp) || logp > kLogpTolerance) throw_domain("free energy: logp must be <= 0");
  return logp >= 0.0 ? 0.0 : -logp;
}

namespace {

template <typename PerStep>
double aggregate(const GenerationRecord& record, Normalization normalization, PerStep&& per_step) {
  if (record.steps.empty()) throw_domain("functional over an empty token path");
  detail::CompensatedSum sum;
  for (const auto& step : record.steps) sum.add(per_step(step));
  const double total = sum.value();
  return normalization == Normalization::Sum ? total
                                             : total / static_cast<double>(record.steps.size());
}

}  // namespace

double sequence_free_energy(const GenerationRecord& record, Normalization normalization) {
  return aggregate(record, normalization,
                   [](const TokenStep& s) { return token_free_energy(s.logp); });
}

double step_entropy(const StepDistribution& dist, EntropyTail tail) {
  double h = 0.0;
  if (tail == EntropyTail::LumpResidual) {
    for (const auto& c : dist.probs) h -= detail::xlogx(c.value);
    h -= detail::xlogx(dist.residual_mass);
  } else {
    double total = 0.0;
    for (const auto& c : dist.probs) total += c.value;
    if (total <= 0.0) return 0.0;
    for (const auto& c : dist.probs) h -= detail::xlogx(c.value / total);
  }
  return std::max(0.0, h);
}

// Same value as step_entropy(StepDistribution::from_step(step), tail), using
// the stored log-probabilities as ln p instead of re-taking the logarithm.
double step_entropy(const TokenStep& step, EntropyTail tail) {
  double total = 0.0;
  double plogp = 0.0;
  for (const auto& c : step.topk) {
    const double p = std::exp(c.value);
    total += p;
    if (p > 0.0) plogp += p * c.value;
  }
  double h = 0.0;
  if (tail == EntropyTail::LumpResidual) {
    h = -plogp - detail::xlogx(std::max(0.0, 1.0 - total));
  } else {
    if (total <= 0.0) return 0.0;
    h = std::log(total) - plogp / total;
  }
  return std::max(0.0, h);
}

double sequence_entropy(const GenerationRecord& record, Normalization normalization,
                        EntropyTail tail) {
  return aggregate(record, normalization,
                   [tail](const TokenStep& s) { return step_entropy(s, tail); });
}

double rescaled_step_logp(const TokenStep& step, double temperature) {
  if (!step.raw_logits_topk || step.raw_logits_topk->empty()) {
    throw Error(ErrorCode::ModeUnavailable, "exact rescale needs raw_logits_topk at every step");
  }
  if (std::isnan(temperature) || temperature <= 0.0) {
    throw_domain("rescale: temperature must be > 0");
  }
  const auto& cands = *step.raw_logits_topk;
  std::size_t chosen = cands.size();
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i].token == step.token_id && chosen == cands.size()) chosen = i;
    top = std::max(top, cands[i].value);
  }
  if (chosen == cands.size()) {
    throw Error(ErrorCode::ModeUnavailable, "exact rescale: chosen token missing from raw logits");
  }
  if (std::isinf(temperature)) return -std::log(static_cast<double>(cands.size()));

  // log-softmax restricted to the candidate set
  double total = 0.0;
  for (const auto& c : cands) total += std::exp((c.value - top) / temperature);
  return (cands[chosen].value - top) / temperature - std::log(total);
}

double rescale_path_free_energy(const GenerationRecord& record, double new_temperature,
                                Normalization normalization) {
  return aggregate(record, normalization, [new_temperature](const TokenStep& s) {
    return -std::min(0.0, rescaled_step_logp(s, new_temperature));
  });
}

}  // namespace hallufield
