#pragma once

// Straight-line reference for the weighted internal-energy variation, written
// independently of the library: plain loops over the stored records, no
// shared helpers. Supports per-token-mean or summed functionals, the lumped
// residual entropy tail, token-sequence path equality and sampled-mean base
// variation.

#include <cmath>
#include <vector>

#include "hallufield/trace_model.hpp"

namespace hftest::reference {

using namespace hallufield;

/// Which part of the potential / entropy difference the path-change
/// indicator multiplies.
enum class IndicatorScope { WholeDifference, FirstTermOnly };

struct Totals {
  double delta_f = 0.0;
  double delta_th = 0.0;
  double delta_u = 0.0;
};

inline double ref_free_energy(const GenerationRecord& r, bool mean) {
  double s = 0.0;
  for (const auto& st : r.steps) s += -st.logp;
  return mean ? s / static_cast<double>(r.steps.size()) : s;
}

inline double ref_entropy(const GenerationRecord& r, bool mean) {
  double s = 0.0;
  for (const auto& st : r.steps) {
    double covered = 0.0;
    double h = 0.0;
    for (const auto& c : st.topk) {
      const double p = std::exp(c.value);
      covered += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    const double m = 1.0 - covered;
    if (m > 0.0) h -= m * std::log(m);
    s += h;
  }
  return mean ? s / static_cast<double>(r.steps.size()) : s;
}

inline bool ref_differ(const GenerationRecord& a, const GenerationRecord& b) {
  if (a.steps.size() != b.steps.size()) return true;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    if (a.steps[i].token_id != b.steps[i].token_id) return true;
  }
  return false;
}

inline Totals score(const QueryBundle& bundle, const ScoreConfig& config,
                    IndicatorScope scope = IndicatorScope::WholeDifference) {
  const bool mean = config.normalization == Normalization::PerTokenMean;
  const double t0 = bundle.base.temperature;
  const double fb = ref_free_energy(bundle.base, mean);
  const double hb = ref_entropy(bundle.base, mean);

  Totals out;
  for (const double dt : config.delta_ts) {
    const auto& samples = *bundle.find_perturbations(dt);
    const double n = static_cast<double>(samples.size());
    double db = 0.0;
    double dp = 0.0;
    double dh = 0.0;
    for (const auto& s : samples) {
      const double f = ref_free_energy(s, mean);
      const double h = ref_entropy(s, mean);
      const double ind = ref_differ(s, bundle.base) ? 1.0 : 0.0;
      db += f - fb;
      if (scope == IndicatorScope::WholeDifference) {
        dp += ind * (f - fb);
        dh += ind * (h - hb);
      } else {
        dp += ind * f - fb;
        dh += ind * h - hb;
      }
    }
    db /= n;
    dp /= n;
    dh = t0 * dh / n;

    const double t = t0 + dt;
    const auto w = [t](const WeightTerm& term) { return term.scale * std::pow(t, term.exponent); };
    out.delta_f += w(config.weights.base) * db + w(config.weights.potential) * dp;
    out.delta_th += w(config.weights.temperature_entropy) * dh;
  }
  out.delta_u = out.delta_f + out.delta_th;
  return out;
}

}  // namespace hftest::reference
