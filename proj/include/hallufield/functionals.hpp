#pragma once

// Free-energy and entropy functionals over token paths, and the
// temperature-scaled softmax they are built on. Natural logarithms throughout.

#include <span>
#include <vector>

#include "hallufield/trace_model.hpp"

namespace hallufield {

/// Next-token distribution recovered from a stored top-k list. Probability
/// not covered by the candidates is kept as `residual_mass`.
struct StepDistribution {
  std::vector<Candidate> probs;  // (token, probability), non-increasing
  double residual_mass = 0.0;

  static StepDistribution from_step(const TokenStep& step);
};

/// softmax(logits / temperature), max-subtracted. temperature == 0 yields the
/// one-hot argmax (lowest index wins ties); +inf yields the uniform limit.
/// Throws Error(Domain) on empty input, non-finite logits or temperature < 0.
std::vector<double> softmax_temperature(std::span<const double> logits, double temperature);

/// F = -log P for one token. Throws Error(Domain) if logp > 1e-9.
double token_free_energy(double logp);

/// Sum (or per-token mean) of token free energies along the path.
double sequence_free_energy(const GenerationRecord& record, Normalization normalization);

double step_entropy(const StepDistribution& dist, EntropyTail tail);
double step_entropy(const TokenStep& step, EntropyTail tail);

double sequence_entropy(const GenerationRecord& record, Normalization normalization,
                        EntropyTail tail);

/// Chosen-token log-probability after re-applying the softmax to the stored
/// raw logits at `temperature`, renormalized over the stored candidate set.
/// Throws Error(ModeUnavailable) if the step has no raw logits or the chosen
/// token is not among them.
double rescaled_step_logp(const TokenStep& step, double temperature);

/// Free energy of the same token path re-evaluated at `new_temperature`.
double rescale_path_free_energy(const GenerationRecord& record, double new_temperature,
                                Normalization normalization);

}  // namespace hallufield
