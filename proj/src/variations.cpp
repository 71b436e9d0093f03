#include "hallufield/variations.hpp"

#include <cmath>
#include <string>

#include "hallufield/error.hpp"
#include "hallufield/functionals.hpp"
#include "numeric.hpp"

namespace hallufield {

double evaluate_weight(const WeightTerm& term, double base_temperature, double delta_t) {
  const double t = base_temperature + delta_t;
  if (!(t > 0.0)) throw_domain("weight undefined for T0 + delta_t <= 0");
  const double w = term.scale * std::pow(t, term.exponent);
  if (!std::isfinite(w)) throw_domain("weight is not finite");
  return w;
}

bool paths_differ(const GenerationRecord& a, const GenerationRecord& b, PathEquality mode) {
  if (a.steps.size() != b.steps.size()) return true;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const auto& x = a.steps[i];
    const auto& y = b.steps[i];
    if (mode == PathEquality::TokenSequence ? x.token_id != y.token_id : x.rank != y.rank) {
      return true;
    }
  }
  return false;
}

namespace {

const std::vector<GenerationRecord>& require_samples(const QueryBundle& bundle, double delta_t) {
  const auto* records = bundle.find_perturbations(delta_t);
  if (records == nullptr) {
    throw Error(ErrorCode::MissingPerturbation,
                "query '" + bundle.query_id + "' has no samples for delta_t " +
                    detail::format_double(delta_t),
                "{\"missing_delta_ts\":[" + detail::format_double(delta_t) + "]}");
  }
  if (records->empty()) {
    throw Error(ErrorCode::MissingPerturbation,
                "query '" + bundle.query_id + "' has an empty sample set for delta_t " +
                    detail::format_double(delta_t),
                "{\"missing_delta_ts\":[" + detail::format_double(delta_t) + "]}");
  }
  return *records;
}

double exact_base_variation(const QueryBundle& bundle, double delta_t, const ScoreConfig& config) {
  if (delta_t < 0.0) throw_domain("delta_t must be >= 0");
  const auto& base = bundle.base;
  const double t0 = base.temperature;
  const double reference = t0 > 0.0 ? rescale_path_free_energy(base, t0, config.normalization)
                                    : sequence_free_energy(base, config.normalization);
  if (delta_t == 0.0) return 0.0 * reference;
  return rescale_path_free_energy(base, t0 + delta_t, config.normalization) - reference;
}

struct BaseFunctionals {
  double free_energy;
  double entropy;
};

BaseFunctionals base_functionals(const QueryBundle& bundle, const ScoreConfig& config) {
  return {sequence_free_energy(bundle.base, config.normalization),
          sequence_entropy(bundle.base, config.normalization, config.entropy_tail)};
}

VariationTriple triple_from_samples(const QueryBundle& bundle, double delta_t,
                                    const std::vector<GenerationRecord>& samples,
                                    const BaseFunctionals& base, const ScoreConfig& config) {
  detail::CompensatedSum f_sum, p_sum, h_sum;
  for (const auto& r : samples) {
    const double f = sequence_free_energy(r, config.normalization);
    f_sum.add(f);
    if (paths_differ(r, bundle.base, config.path_equality)) {
      p_sum.add(f - base.free_energy);
      h_sum.add(sequence_entropy(r, config.normalization, config.entropy_tail) - base.entropy);
    }
  }
  const double n = static_cast<double>(samples.size());
  VariationTriple t;
  t.delta_t = delta_t;
  t.delta_b = config.base_variation_mode == BaseVariationMode::SampledMean
                  ? f_sum.value() / n - base.free_energy
                  : exact_base_variation(bundle, delta_t, config);
  t.delta_p = p_sum.value() / n;
  t.delta_th = bundle.base.temperature * (h_sum.value() / n);
  return t;
}

}  // namespace

double base_variation(const QueryBundle& bundle, double delta_t, const ScoreConfig& config) {
  if (config.base_variation_mode == BaseVariationMode::ExactRescale) {
    return exact_base_variation(bundle, delta_t, config);
  }
  const auto& samples = require_samples(bundle, delta_t);
  detail::CompensatedSum sum;
  for (const auto& r : samples) sum.add(sequence_free_energy(r, config.normalization));
  return sum.value() / static_cast<double>(samples.size()) -
         sequence_free_energy(bundle.base, config.normalization);
}

double potential_change(const QueryBundle& bundle, double delta_t, const ScoreConfig& config) {
  const auto& samples = require_samples(bundle, delta_t);
  const double base_f = sequence_free_energy(bundle.base, config.normalization);
  detail::CompensatedSum sum;
  for (const auto& r : samples) {
    if (paths_differ(r, bundle.base, config.path_equality)) {
      sum.add(sequence_free_energy(r, config.normalization) - base_f);
    }
  }
  return sum.value() / static_cast<double>(samples.size());
}

double temperature_entropy_variation(const QueryBundle& bundle, double delta_t,
                                     const ScoreConfig& config) {
  const auto& samples = require_samples(bundle, delta_t);
  const double base_h = sequence_entropy(bundle.base, config.normalization, config.entropy_tail);
  detail::CompensatedSum sum;
  for (const auto& r : samples) {
    if (paths_differ(r, bundle.base, config.path_equality)) {
      sum.add(sequence_entropy(r, config.normalization, config.entropy_tail) - base_h);
    }
  }
  return bundle.base.temperature * (sum.value() / static_cast<double>(samples.size()));
}

VariationTriple variation_triple(const QueryBundle& bundle, double delta_t,
                                 const ScoreConfig& config) {
  const auto& samples = require_samples(bundle, delta_t);
  return triple_from_samples(bundle, delta_t, samples, base_functionals(bundle, config), config);
}

InternalEnergyVariation total_internal_energy_variation(const QueryBundle& bundle,
                                                        const ScoreConfig& config,
                                                        const WeightSchedule& weights) {
  std::string missing;
  for (double dt : config.delta_ts) {
    const auto* records = bundle.find_perturbations(dt);
    if (records == nullptr || records->empty()) {
      if (!missing.empty()) missing += ',';
      missing += detail::format_double(dt);
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::MissingPerturbation,
                "query '" + bundle.query_id + "' is missing delta_t samples: " + missing,
                "{\"missing_delta_ts\":[" + missing + "]}");
  }

  const double t0 = bundle.base.temperature;
  const BaseFunctionals base = base_functionals(bundle, config);
  InternalEnergyVariation out;
  out.per_delta_t.reserve(config.delta_ts.size());
  for (double dt : config.delta_ts) {
    const auto t = triple_from_samples(bundle, dt, *bundle.find_perturbations(dt), base, config);
    out.delta_f += evaluate_weight(weights.base, t0, dt) * t.delta_b +
                   evaluate_weight(weights.potential, t0, dt) * t.delta_p;
    out.delta_th += evaluate_weight(weights.temperature_entropy, t0, dt) * t.delta_th;
    out.per_delta_t.push_back(t);
  }
  out.delta_u = out.delta_f + out.delta_th;
  return out;
}

double hallufield_se_score(double delta_u, double se, double lambda) {
  if (!(lambda > 0.0)) throw_domain("lambda must be > 0");
  return delta_u + lambda * se;
}

}  // namespace hallufield
