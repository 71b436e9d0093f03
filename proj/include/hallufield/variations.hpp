#pragma once

// Temperature-parametrized variations of the free-energy and
// temperature-entropy functionals, their weighted totals, and the
// HalluField / HalluFieldSE scores.

#include <vector>

#include "hallufield/trace_model.hpp"

namespace hallufield {

/// scale * (T0 + dT)^exponent. Throws Error(Domain) when T0 + dT <= 0.
double evaluate_weight(const WeightTerm& term, double base_temperature, double delta_t);

/// Whether two paths are different token sequences (or rank vectors).
/// Paths of different length always differ.
bool paths_differ(const GenerationRecord& a, const GenerationRecord& b, PathEquality mode);

/// Change of the base path's free energy when the temperature is raised by
/// delta_t. SampledMean: mean free energy of the stored samples at
/// T0 + delta_t minus the base free energy. ExactRescale: the base path
/// re-evaluated from raw logits at T0 + delta_t minus the same re-evaluation
/// at T0 (so delta_t = 0 gives exactly 0).
double base_variation(const QueryBundle& bundle, double delta_t, const ScoreConfig& config);

/// Mean free-energy excess of the samples at T0 + delta_t, counting only
/// samples whose path differs from the base path.
double potential_change(const QueryBundle& bundle, double delta_t, const ScoreConfig& config);

/// T0 times the mean entropy excess of differing samples at T0 + delta_t.
double temperature_entropy_variation(const QueryBundle& bundle, double delta_t,
                                     const ScoreConfig& config);

/// All three variations for one delta_t, sharing the per-record functionals.
VariationTriple variation_triple(const QueryBundle& bundle, double delta_t,
                                 const ScoreConfig& config);

struct InternalEnergyVariation {
  std::vector<VariationTriple> per_delta_t;
  double delta_f = 0.0;
  double delta_th = 0.0;
  double delta_u = 0.0;
};

/// dF = sum_dT [w_b dB + w_p dP], d(TH) = sum_dT w_th d(TH), dU = dF + d(TH),
/// summed in ascending delta_t order. Throws Error(MissingPerturbation)
/// naming every configured delta_t absent from the bundle.
InternalEnergyVariation total_internal_energy_variation(const QueryBundle& bundle,
                                                        const ScoreConfig& config,
                                                        const WeightSchedule& weights);

inline InternalEnergyVariation total_internal_energy_variation(const QueryBundle& bundle,
                                                               const ScoreConfig& config) {
  return total_internal_energy_variation(bundle, config, config.weights);
}

/// delta_u + lambda * se. Throws Error(Domain) when lambda <= 0.
double hallufield_se_score(double delta_u, double se, double lambda);

}  // namespace hallufield
