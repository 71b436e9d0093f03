#include <doctest.h>

#include <cmath>

#include "builders.hpp"
#include "hallufield/toy_lm.hpp"
#include "hallufield/variations.hpp"
#include "reference_scorer.hpp"

using namespace hftest;

namespace {

std::vector<QueryBundle> random_bundles(std::uint64_t seed, std::size_t n, std::size_t samples,
                                        std::size_t max_len) {
  const auto model = ToyModel::random(8 + seed % 9, seed, 3.0, max_len);
  DatasetParams p;
  p.n_queries = n;
  p.samples_per_delta_t = samples;
  p.seed = seed;
  p.base_temperature = 0.25 + 0.25 * static_cast<double>(seed % 4);
  return make_dataset(model, p);
}

bool within_rel(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("library totals match the straight-line reference") {
  std::size_t compared = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& b : random_bundles(seed, 6, 3 + seed, 4 + 4 * seed)) {
      for (const auto norm : {Normalization::PerTokenMean, Normalization::Sum}) {
        ScoreConfig c;
        c.normalization = norm;
        const auto lib = total_internal_energy_variation(b, c);
        const auto ref = reference::score(b, c);
        CHECK(within_rel(lib.delta_f, ref.delta_f, 1e-9));
        CHECK(within_rel(lib.delta_th, ref.delta_th, 1e-9));
        CHECK(within_rel(lib.delta_u, ref.delta_u, 1e-9));
        ++compared;
      }
    }
  }
  CHECK(compared >= 100);
}

TEST_CASE("reference agrees under custom weights") {
  ScoreConfig c;
  c.weights.base = {0.5, 2.0};
  c.weights.potential = {-1.0, 0.25};
  c.weights.temperature_entropy = {0.0, 3.0};
  for (const auto& b : random_bundles(42, 10, 8, 20)) {
    const auto lib = total_internal_energy_variation(b, c);
    const auto ref = reference::score(b, c);
    CHECK(within_rel(lib.delta_u, ref.delta_u, 1e-9));
  }
}

TEST_CASE("indicator scope changes the result") {
  // A bundle where one sample repeats the base path: the two readings
  // differ by the base terms of that sample.
  const auto base = record("q", 0.5, {{1, -0.2}, {2, -0.3}});
  const auto same = record("q", 0, {{1, -0.4}, {2, -0.6}});
  const auto other = record("q", 0, {{3, -1.0}, {2, -1.0}});
  ScoreConfig c;
  c.delta_ts = {1.0};
  const auto b = bundle(base, {{1.0, {same, other}}});
  const auto whole = reference::score(b, c, reference::IndicatorScope::WholeDifference);
  const auto first = reference::score(b, c, reference::IndicatorScope::FirstTermOnly);
  CHECK(std::abs(whole.delta_f - first.delta_f) > 1e-3);
  CHECK(within_rel(total_internal_energy_variation(b, c).delta_f, whole.delta_f, 1e-12));

  std::size_t disagreements = 0;
  for (const auto& qb : random_bundles(5, 20, 10, 6)) {
    const auto w = reference::score(qb, ScoreConfig{}, reference::IndicatorScope::WholeDifference);
    const auto f = reference::score(qb, ScoreConfig{}, reference::IndicatorScope::FirstTermOnly);
    if (!within_rel(w.delta_u, f.delta_u, 1e-9)) ++disagreements;
  }
  CHECK(disagreements > 0);
}
