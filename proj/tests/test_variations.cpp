#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "builders.hpp"
#include "hallufield/error.hpp"
#include "hallufield/functionals.hpp"
#include "hallufield/toy_lm.hpp"
#include "hallufield/variations.hpp"

using namespace hftest;
using doctest::Approx;

namespace {

ScoreConfig single_dt_config(double dt) {
  ScoreConfig c;
  c.delta_ts = {dt};
  return c;
}

QueryBundle toy_bundle(std::uint64_t seed, std::size_t samples = 20) {
  const auto model = ToyModel::random(10, seed);
  DatasetParams p;
  p.n_queries = 2;
  p.samples_per_delta_t = samples;
  p.seed = seed;
  return make_dataset(model, p)[seed % 2];
}

}  // namespace

TEST_CASE("paths_differ") {
  const auto a = record("q", 1.0, {{1, -0.1}, {2, -0.2}});
  CHECK_FALSE(paths_differ(a, a, PathEquality::TokenSequence));
  CHECK_FALSE(paths_differ(a, a, PathEquality::RankVector));

  auto longer = a;
  longer.steps.push_back(step(2, -0.3));
  CHECK(paths_differ(a, longer, PathEquality::TokenSequence));
  CHECK(paths_differ(a, longer, PathEquality::RankVector));

  auto other = record("q", 1.0, {{5, -0.1}, {7, -0.2}});
  CHECK(paths_differ(a, other, PathEquality::TokenSequence));
  CHECK_FALSE(paths_differ(a, other, PathEquality::RankVector));
}

TEST_CASE("sampled-mean base variation on a hand-built bundle") {
  const auto b = bundle(one_step("q", 1.0, 1, 1.0),
                        {{1.0, {one_step("q", 0, 2, 2.0), one_step("q", 0, 3, 4.0)}}});
  CHECK(base_variation(b, 1.0, single_dt_config(1.0)) == Approx(2.0).epsilon(1e-15));
}

TEST_CASE("exact-rescale base variation is zero at delta_t = 0") {
  const auto b = toy_bundle(4);
  ScoreConfig c;
  c.base_variation_mode = BaseVariationMode::ExactRescale;
  CHECK(base_variation(b, 0.0, c) == 0.0);
}

TEST_CASE("exact-rescale base variation of an argmax base path is non-negative") {
  const auto model = ToyModel::random(12, 8);
  DatasetParams p;
  for (std::size_t q = 0; q < 6; ++q) {
    const auto spec = make_query_spec(model, p, q);
    QueryBundle b;
    b.query_id = spec.query_id;
    b.base = generate(model, spec, 0.0, 1);
    // Argmax path re-labelled as a T0 = 0.5 record: the stored logits still rank it first.
    b.base.temperature = 0.5;
    ScoreConfig c;
    c.base_variation_mode = BaseVariationMode::ExactRescale;
    for (double dt : {0.01, 0.1, 0.5, 1.0, 2.0, 10.0}) CHECK(base_variation(b, dt, c) >= 0.0);
  }
}

TEST_CASE("exact-rescale without raw logits is unavailable") {
  const auto b = bundle(one_step("q", 1.0, 1, 1.0), {{1.0, {one_step("q", 0, 2, 2.0)}}});
  ScoreConfig c = single_dt_config(1.0);
  c.base_variation_mode = BaseVariationMode::ExactRescale;
  try {
    base_variation(b, 1.0, c);
    FAIL("expected ModeUnavailable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ModeUnavailable);
  }
}

TEST_CASE("potential change") {
  const auto base = one_step("q", 1.0, 1, 1.0);
  SUBCASE("identical paths contribute nothing") {
    const auto b = bundle(base, {{1.0, {base, base, base}}});
    CHECK(potential_change(b, 1.0, single_dt_config(1.0)) == 0.0);
    CHECK(temperature_entropy_variation(b, 1.0, single_dt_config(1.0)) == 0.0);
  }
  SUBCASE("one identical, one differing") {
    const auto b = bundle(base, {{1.0, {base, one_step("q", 0, 2, 5.0)}}});
    CHECK(potential_change(b, 1.0, single_dt_config(1.0)) == Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("equals sampled-mean base variation when every path differs") {
    const auto b = bundle(base, {{1.0, {one_step("q", 0, 2, 5.0), one_step("q", 0, 3, 0.5),
                                        one_step("q", 0, 4, 2.25)}}});
    const auto c = single_dt_config(1.0);
    CHECK(potential_change(b, 1.0, c) == Approx(base_variation(b, 1.0, c)).epsilon(1e-14));
  }
}

TEST_CASE("temperature-entropy variation on a hand-built bundle") {
  // Base entropy 1.0 and perturbed entropy 2.5 from lumped distributions.
  auto lumped = [](double target, std::int64_t token) {
    double lo = 1e-12, hi = 0.5;
    const int m = 30;
    for (int it = 0; it < 200; ++it) {
      const double p = 0.5 * (lo + hi);
      const double r = 1.0 - m * p;
      const double h = -m * p * std::log(p) - (r > 0 ? r * std::log(r) : 0.0);
      (h < target ? lo : hi) = p;
    }
    const double p = 0.5 * (lo + hi);
    std::vector<Candidate> c;
    for (int i = 0; i < m; ++i) c.push_back({token + i, std::log(p)});
    GenerationRecord r;
    r.query_id = "q";
    r.steps.push_back(step_with_topk(c));
    return r;
  };
  auto base = lumped(1.0, 0);
  base.temperature = 1.0;
  const auto b = bundle(base, {{1.0, {lumped(2.5, 100)}}});
  const auto c = single_dt_config(1.0);
  CHECK(temperature_entropy_variation(b, 1.0, c) == Approx(1.5).epsilon(1e-9));

  // T0 enters linearly.
  auto hot = b;
  hot.base.temperature = 2.0;
  CHECK(temperature_entropy_variation(hot, 1.0, c) ==
        Approx(2.0 * temperature_entropy_variation(b, 1.0, c)).epsilon(1e-15));
}

TEST_CASE("weighted totals on the worked single-delta_t example") {
  // T0 = 1, dT = 1, dB = dP = 2, d(TH) = 1.5.
  const double w_b = evaluate_weight(WeightSchedule{}.base, 1.0, 1.0);
  const double w_p = evaluate_weight(WeightSchedule{}.potential, 1.0, 1.0);
  const double w_th = evaluate_weight(WeightSchedule{}.temperature_entropy, 1.0, 1.0);
  CHECK(w_b == 2.0);
  CHECK(w_p == 0.25);
  CHECK(w_th == 0.25);
  const double df = w_b * 2.0 + w_p * 2.0;
  const double dth = w_th * 1.5;
  CHECK(df == 4.5);
  CHECK(dth == 0.375);
  CHECK(df + dth == 4.875);

  // The same numbers through a bundle: base F = 1, every sample differs with F = 3, so
  // dB = dP = 2. A single candidate with probability p lumps 1 - p as residual.
  const auto b = bundle(one_step("q", 1.0, 1, 1.0),
                        {{1.0, {one_step("q", 0, 2, 3.0), one_step("q", 0, 3, 3.0)}}});
  const auto total = total_internal_energy_variation(b, single_dt_config(1.0));
  CHECK(total.delta_f == Approx(4.5).epsilon(1e-15));
  const auto h = [](double f) {
    const double p = std::exp(-f);
    return p * f - (1.0 - p) * std::log1p(-p);
  };
  CHECK(total.delta_th == Approx(0.25 * 1.0 * (h(3.0) - h(1.0))).epsilon(1e-14));
  CHECK(total.delta_u == total.delta_f + total.delta_th);
}

TEST_CASE("weights") {
  CHECK(evaluate_weight({1.0, 1.0}, 0.5, 1.0) == 1.5);
  CHECK(evaluate_weight({-2.0, 1.0}, 0.5, 1.5) == 0.25);
  CHECK(evaluate_weight({-2.0, 3.0}, 0.5, 1.5) == 0.75);
  CHECK(evaluate_weight({0.5, 2.0}, 3.0, 1.0) == 4.0);
  CHECK_THROWS_AS(evaluate_weight({1.0, 1.0}, 0.0, 0.0), Error);
  CHECK_THROWS_AS(evaluate_weight({-2.0, 1.0}, 0.5, -0.5), Error);
}

TEST_CASE("missing delta_t lists every absent key") {
  const auto b = bundle(one_step("q", 1.0, 1, 1.0), {{1.0, {one_step("q", 0, 2, 3.0)}}});
  ScoreConfig c;
  c.delta_ts = {0.5, 1.0, 2.0};
  try {
    total_internal_energy_variation(b, c);
    FAIL("expected MissingPerturbation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPerturbation);
    const auto detail = nlohmann::json::parse(e.detail());
    CHECK(detail["missing_delta_ts"] == nlohmann::json::array({0.5, 2.0}));
  }
  CHECK_THROWS_AS(potential_change(b, 0.5, c), Error);
  CHECK_THROWS_AS(temperature_entropy_variation(b, 0.5, c), Error);
  CHECK_THROWS_AS(base_variation(b, 0.5, c), Error);
}

TEST_CASE("all perturbed paths equal to base and exact rescale near zero: dU vanishes") {
  auto b = toy_bundle(6, 4);
  for (auto& [dt, records] : b.perturbations) {
    for (auto& r : records) {
      const auto keep = as_perturbation(b.base, b.base.temperature, dt, r.sample_index);
      r = keep;
    }
  }
  ScoreConfig c;
  c.base_variation_mode = BaseVariationMode::ExactRescale;
  c.delta_ts = {1e-9};
  b.perturbations = {{1e-9, b.perturbations.begin()->second}};
  for (auto& r : b.perturbations.begin()->second) {
    r.delta_t = 1e-9;
    r.temperature = b.base.temperature + 1e-9;
  }
  const auto total = total_internal_energy_variation(b, c);
  CHECK(std::abs(total.delta_u) < 1e-7);
  CHECK(total.per_delta_t[0].delta_p == 0.0);
  CHECK(total.per_delta_t[0].delta_th == 0.0);
}

TEST_CASE("dU is linear in each variation with the schedule weights") {
  const auto b = toy_bundle(12);
  const ScoreConfig c;
  const auto total = total_internal_energy_variation(b, c);
  double df = 0.0, dth = 0.0;
  const double t0 = b.base.temperature;
  for (const auto& t : total.per_delta_t) {
    df += evaluate_weight(c.weights.base, t0, t.delta_t) * t.delta_b +
          evaluate_weight(c.weights.potential, t0, t.delta_t) * t.delta_p;
    dth += evaluate_weight(c.weights.temperature_entropy, t0, t.delta_t) * t.delta_th;
  }
  CHECK(total.delta_f == df);
  CHECK(total.delta_th == dth);
  CHECK(total.delta_u == total.delta_f + total.delta_th);

  // Scaling a weight scales its contribution exactly.
  WeightSchedule w = c.weights;
  w.potential.scale = 3.0;
  const auto scaled = total_internal_energy_variation(b, c, w);
  double extra = 0.0;
  for (const auto& t : total.per_delta_t) {
    extra += 2.0 * evaluate_weight(c.weights.potential, t0, t.delta_t) * t.delta_p;
  }
  CHECK(scaled.delta_f == Approx(total.delta_f + extra).epsilon(1e-13));
}

TEST_CASE("variation_triple agrees with the individual functions") {
  for (std::uint64_t seed = 1; seed < 6; ++seed) {
    const auto b = toy_bundle(seed);
    ScoreConfig c;
    for (auto mode : {BaseVariationMode::SampledMean, BaseVariationMode::ExactRescale}) {
      c.base_variation_mode = mode;
      for (double dt : c.delta_ts) {
        const auto t = variation_triple(b, dt, c);
        CHECK(t.delta_t == dt);
        CHECK(t.delta_b == Approx(base_variation(b, dt, c)).epsilon(1e-13));
        CHECK(t.delta_p == Approx(potential_change(b, dt, c)).epsilon(1e-13));
        CHECK(t.delta_th == Approx(temperature_entropy_variation(b, dt, c)).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("dP and d(TH) ignore sample order") {
  auto b = toy_bundle(9, 40);
  const ScoreConfig c;
  const auto before = total_internal_energy_variation(b, c);
  std::mt19937_64 gen(1);
  for (auto& [dt, records] : b.perturbations) std::shuffle(records.begin(), records.end(), gen);
  const auto after = total_internal_energy_variation(b, c);
  for (std::size_t i = 0; i < before.per_delta_t.size(); ++i) {
    CHECK(std::abs(before.per_delta_t[i].delta_p - after.per_delta_t[i].delta_p) <= 1e-12);
    CHECK(std::abs(before.per_delta_t[i].delta_th - after.per_delta_t[i].delta_th) <= 1e-12);
  }
}

TEST_CASE("a sample equal to base only changes the 1/L divisor") {
  auto b = toy_bundle(10, 30);
  const ScoreConfig c;
  const double dt = c.delta_ts.front();
  const double p0 = potential_change(b, dt, c);
  const double h0 = temperature_entropy_variation(b, dt, c);
  auto& records = b.perturbations[dt];
  const double l = static_cast<double>(records.size());
  records.push_back(as_perturbation(b.base, b.base.temperature, dt, static_cast<std::int64_t>(records.size())));
  CHECK(potential_change(b, dt, c) == Approx(p0 * l / (l + 1)).epsilon(1e-13));
  CHECK(temperature_entropy_variation(b, dt, c) == Approx(h0 * l / (l + 1)).epsilon(1e-13));
}

TEST_CASE("HalluFieldSE") {
  CHECK(hallufield_se_score(4.875, 0.0, 2.0) == 4.875);
  CHECK(hallufield_se_score(4.875, 0.5, 2.0) == 5.875);
  const double base = hallufield_se_score(1.0, 0.3, 2.0) - 1.0;
  CHECK(hallufield_se_score(1.0, 0.3, 6.0) - 1.0 == Approx(3.0 * base).epsilon(1e-15));
  CHECK_THROWS_AS(hallufield_se_score(1.0, 0.3, 0.0), Error);
  CHECK_THROWS_AS(hallufield_se_score(1.0, 0.3, -2.0), Error);
}
