#include "hallufield/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "hallufield/error.hpp"
#include "hallufield/functionals.hpp"
#include "numeric.hpp"

namespace hallufield {

double Rng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64(seed ^ splitmix64(stream)) >> 1;
}

std::size_t sample_categorical(std::span<const double> probs, double u) {
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

std::span<const double> ToyModel::row(std::int64_t prev) const {
  return std::span<const double>(transition_logits)
      .subspan(static_cast<std::size_t>(prev) * vocab_size, vocab_size);
}

void ToyModel::check() const {
  if (vocab_size < 2) throw_domain("toy model needs at least two tokens");
  if (transition_logits.size() != vocab_size * vocab_size) {
    throw_domain("toy model transition table has the wrong shape");
  }
  if (eos_token < 0 || static_cast<std::size_t>(eos_token) >= vocab_size) {
    throw_domain("toy model eos token out of range");
  }
  if (max_len == 0) throw_domain("toy model max_len must be >= 1");
  for (double l : transition_logits) {
    if (!std::isfinite(l)) throw_domain("toy model logits must be finite");
  }
}

ToyModel ToyModel::random(std::size_t vocab_size, std::uint64_t seed, double peak_boost,
                          std::size_t max_len) {
  if (vocab_size < 2) throw_domain("toy model needs at least two tokens");
  ToyModel m;
  m.vocab_size = vocab_size;
  m.eos_token = 0;
  m.max_len = max_len;
  m.transition_logits.resize(vocab_size * vocab_size);
  Rng rng(seed);
  for (std::size_t r = 0; r < vocab_size; ++r) {
    double* row = m.transition_logits.data() + r * vocab_size;
    for (std::size_t c = 0; c < vocab_size; ++c) row[c] = rng.normal();
    const std::size_t peak = 1 + static_cast<std::size_t>(rng.next_u64() % (vocab_size - 1));
    row[peak] += peak_boost;
    row[0] -= 1.0;
  }
  return m;
}

std::vector<double> next_token_logits(const ToyModel& model, const SyntheticQuerySpec& spec,
                                      std::span<const std::int64_t> prefix) {
  std::span<const double> src =
      prefix.empty() ? std::span<const double>(spec.initial_logits) : model.row(prefix.back());
  std::vector<double> out(src.begin(), src.end());
  for (double& l : out) l *= spec.sharpness;
  return out;
}

namespace {

// Candidate order: descending logit, lower token id first on ties.
std::vector<std::size_t> rank_order(std::span<const double> logits) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  return order;
}

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp((l - top) / temperature);
  const double log_total = std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - top) / temperature - log_total;
  return out;
}

struct StepModel {
  std::vector<double> logits;
  std::vector<double> logps;  // empty at T = 0
  std::vector<std::size_t> order;
};

StepModel step_model(const ToyModel& model, const SyntheticQuerySpec& spec,
                     std::span<const std::int64_t> prefix, double temperature) {
  StepModel s;
  s.logits = next_token_logits(model, spec, prefix);
  s.order = rank_order(s.logits);
  if (temperature > 0.0) s.logps = log_softmax(s.logits, temperature);
  return s;
}

TokenStep make_step(const StepModel& s, std::size_t chosen) {
  TokenStep step;
  step.token_id = static_cast<std::int64_t>(chosen);
  const auto pos = std::find(s.order.begin(), s.order.end(), chosen) - s.order.begin();
  step.rank = static_cast<std::int64_t>(pos) + 1;
  std::vector<Candidate> raw;
  raw.reserve(s.order.size());
  for (std::size_t idx : s.order) raw.push_back({static_cast<std::int64_t>(idx), s.logits[idx]});
  if (s.logps.empty()) {
    step.logp = 0.0;
    step.topk = {{step.token_id, 0.0}};
  } else {
    step.logp = s.logps[chosen];
    step.topk.reserve(s.order.size());
    for (std::size_t idx : s.order) step.topk.push_back({static_cast<std::int64_t>(idx), s.logps[idx]});
  }
  step.raw_logits_topk = std::move(raw);
  return step;
}

void check_spec(const ToyModel& model, const SyntheticQuerySpec& spec) {
  model.check();
  if (!(spec.sharpness > 0.0) || !std::isfinite(spec.sharpness)) {
    throw_domain("query sharpness must be > 0");
  }
  if (spec.initial_logits.size() != model.vocab_size) {
    throw_domain("query initial logits must have vocab_size entries");
  }
  for (double l : spec.initial_logits) {
    if (!std::isfinite(l)) throw_domain("query initial logits must be finite");
  }
}

}  // namespace

GenerationRecord generate(const ToyModel& model, const SyntheticQuerySpec& spec,
                          double temperature, std::int64_t seed) {
  check_spec(model, spec);
  if (std::isnan(temperature) || temperature < 0.0) throw_domain("temperature must be >= 0");

  GenerationRecord record;
  record.query_id = spec.query_id;
  record.temperature = temperature;
  record.seed = seed;
  Rng rng(static_cast<std::uint64_t>(seed));
  std::vector<std::int64_t> tokens;
  std::vector<double> probs(model.vocab_size);
  while (tokens.size() < model.max_len) {
    const StepModel s = step_model(model, spec, tokens, temperature);
    std::size_t chosen;
    if (temperature == 0.0) {
      chosen = s.order.front();
    } else {
      for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(s.logps[i]);
      chosen = sample_categorical(probs, rng.uniform());
    }
    record.steps.push_back(make_step(s, chosen));
    tokens.push_back(static_cast<std::int64_t>(chosen));
    if (static_cast<std::int64_t>(chosen) == model.eos_token) break;
  }
  return record;
}

SyntheticQuerySpec make_query_spec(const ToyModel& model, const DatasetParams& params,
                                   std::size_t index) {
  SyntheticQuerySpec spec;
  char id[32];
  std::snprintf(id, sizeof(id), "q%05zu", index);
  spec.query_id = id;
  spec.label = index % 2 == 0;
  spec.sharpness = spec.label ? params.sharpness_low : params.sharpness_high;

  Rng rng(mix_seed(mix_seed(params.seed, index), 0));
  spec.initial_logits.resize(model.vocab_size);
  for (double& l : spec.initial_logits) l = rng.normal();
  const std::size_t peak = 1 + static_cast<std::size_t>(rng.next_u64() % (model.vocab_size - 1));
  spec.initial_logits[peak] += params.peak_boost;
  return spec;
}

std::vector<QueryBundle> make_dataset(const ToyModel& model, const DatasetParams& params) {
  model.check();
  if (params.n_queries % 2 != 0) throw_domain("n_queries must be even");
  if (!(params.sharpness_low > 0.0) || !(params.sharpness_high > params.sharpness_low)) {
    throw_domain("need 0 < sharpness_low < sharpness_high");
  }
  if (params.samples_per_delta_t == 0) throw_domain("samples_per_delta_t must be >= 1");
  ScoreConfig probe;
  probe.base_temperature = params.base_temperature;
  probe.delta_ts = params.delta_ts;
  validate_config(probe);

  std::vector<QueryBundle> bundles;
  bundles.reserve(params.n_queries);
  for (std::size_t q = 0; q < params.n_queries; ++q) {
    const SyntheticQuerySpec spec = make_query_spec(model, params, q);
    const std::uint64_t query_seed = mix_seed(params.seed, q);
    auto tag = [&](GenerationRecord& r) {
      if (params.assign_clusters) r.cluster = r.steps.front().token_id;
    };

    QueryBundle b;
    b.query_id = spec.query_id;
    b.label = spec.label;
    b.base = generate(model, spec, params.base_temperature,
                      static_cast<std::int64_t>(mix_seed(query_seed, 1)));
    b.base.role = Role::Base;
    b.base.label = spec.label;
    tag(b.base);

    for (std::size_t j = 0; j < params.delta_ts.size(); ++j) {
      const double dt = params.delta_ts[j];
      const std::uint64_t dt_seed = mix_seed(query_seed, 2 + j);
      auto& records = b.perturbations[dt];
      records.reserve(params.samples_per_delta_t);
      for (std::size_t l = 0; l < params.samples_per_delta_t; ++l) {
        GenerationRecord r = generate(model, spec, params.base_temperature + dt,
                                      static_cast<std::int64_t>(mix_seed(dt_seed, l)));
        r.role = Role::Perturbation;
        r.delta_t = dt;
        r.sample_index = static_cast<std::int64_t>(l);
        tag(r);
        records.push_back(std::move(r));
      }
    }
    bundles.push_back(std::move(b));
  }
  return bundles;
}

double PathOutcome::free_energy(Normalization normalization) const {
  detail::CompensatedSum sum;
  for (double lp : step_logps) sum.add(-lp);
  return normalization == Normalization::Sum ? sum.value()
                                             : sum.value() / static_cast<double>(step_logps.size());
}

double PathOutcome::entropy(Normalization normalization) const {
  detail::CompensatedSum sum;
  for (double h : step_entropies) sum.add(h);
  return normalization == Normalization::Sum
             ? sum.value()
             : sum.value() / static_cast<double>(step_entropies.size());
}

double PathDistribution::total_probability() const {
  detail::CompensatedSum sum;
  for (const auto& p : paths) sum.add(p.probability);
  return sum.value();
}

namespace {

void enumerate(const ToyModel& model, const SyntheticQuerySpec& spec, double temperature,
               std::size_t horizon, PathOutcome& current, double log_prob,
               std::vector<PathOutcome>& out) {
  const StepModel s = step_model(model, spec, current.tokens, temperature);
  double h = 0.0;
  for (double lp : s.logps) h -= std::exp(lp) * lp;
  for (std::size_t tok = 0; tok < model.vocab_size; ++tok) {
    const auto pos = std::find(s.order.begin(), s.order.end(), tok) - s.order.begin();
    current.tokens.push_back(static_cast<std::int64_t>(tok));
    current.ranks.push_back(static_cast<std::int64_t>(pos) + 1);
    current.step_logps.push_back(s.logps[tok]);
    current.step_entropies.push_back(h);
    const double lp = log_prob + s.logps[tok];
    if (static_cast<std::int64_t>(tok) == model.eos_token || current.tokens.size() == horizon) {
      PathOutcome done = current;
      done.probability = std::exp(lp);
      out.push_back(std::move(done));
    } else {
      enumerate(model, spec, temperature, horizon, current, lp, out);
    }
    current.tokens.pop_back();
    current.ranks.pop_back();
    current.step_logps.pop_back();
    current.step_entropies.pop_back();
  }
}

}  // namespace

PathDistribution brute_force_expectations(const ToyModel& model, const SyntheticQuerySpec& spec,
                                          double temperature, std::size_t horizon) {
  check_spec(model, spec);
  if (!(temperature > 0.0)) throw_domain("enumeration needs temperature > 0");
  if (horizon == 0) throw_domain("horizon must be >= 1");
  double bound = 1.0;
  for (std::size_t i = 0; i < horizon; ++i) {
    bound *= static_cast<double>(model.vocab_size);
    if (bound > static_cast<double>(kMaxEnumeratedPaths)) {
      throw Error(ErrorCode::EnumerationTooLarge,
                  "vocab_size^horizon exceeds " + std::to_string(kMaxEnumeratedPaths) + " paths");
    }
  }
  PathDistribution dist;
  dist.temperature = temperature;
  PathOutcome current;
  enumerate(model, spec, temperature, horizon, current, 0.0, dist.paths);
  return dist;
}

VariationTriple exact_variations(const PathDistribution& perturbed, const GenerationRecord& base,
                                 const ScoreConfig& config) {
  const double base_f = sequence_free_energy(base, config.normalization);
  const double base_h = sequence_entropy(base, config.normalization, config.entropy_tail);

  auto differs = [&](const PathOutcome& p) {
    if (p.tokens.size() != base.steps.size()) return true;
    for (std::size_t i = 0; i < p.tokens.size(); ++i) {
      const bool same = config.path_equality == PathEquality::TokenSequence
                            ? p.tokens[i] == base.steps[i].token_id
                            : p.ranks[i] == base.steps[i].rank;
      if (!same) return true;
    }
    return false;
  };

  detail::CompensatedSum f_sum, p_sum, h_sum;
  for (const auto& p : perturbed.paths) {
    const double f = p.free_energy(config.normalization);
    f_sum.add(p.probability * f);
    if (differs(p)) {
      p_sum.add(p.probability * (f - base_f));
      h_sum.add(p.probability * (p.entropy(config.normalization) - base_h));
    }
  }
  VariationTriple t;
  t.delta_t = perturbed.temperature - base.temperature;
  t.delta_b = f_sum.value() - base_f;
  t.delta_p = p_sum.value();
  t.delta_th = base.temperature * h_sum.value();
  return t;
}

}  // namespace hallufield
