#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "builders.hpp"
#include "hallufield/error.hpp"
#include "hallufield/functionals.hpp"
#include "hallufield/toy_lm.hpp"
#include "hallufield/trace_io.hpp"
#include "hallufield/variations.hpp"

using namespace hftest;
using doctest::Approx;

namespace {

SyntheticQuerySpec spec_for(const ToyModel& model, std::size_t index, std::uint64_t seed = 0) {
  DatasetParams p;
  p.seed = seed;
  return make_query_spec(model, p, index);
}

// Upper-tail probability of a chi-square variable with k degrees of freedom
// (regularized upper incomplete gamma by continued fraction).
double chi_square_sf(double x, double k) {
  const double a = k / 2.0, z = x / 2.0;
  if (z < a + 1.0) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 1000; ++n) {
      term *= z / (a + n);
      sum += term;
    }
    return 1.0 - sum * std::exp(-z + a * std::log(z) - std::lgamma(a));
  }
  double b = z + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    d = 1.0 / d;
    c = b + an / c;
    h *= d * c;
  }
  return h * std::exp(-z + a * std::log(z) - std::lgamma(a));
}

}  // namespace

TEST_CASE("chi-square survival helper") {
  CHECK(chi_square_sf(3.841458820694124, 1) == Approx(0.05).epsilon(1e-6));
  CHECK(chi_square_sf(24.99579013972863, 15) == Approx(0.05).epsilon(1e-6));
  CHECK(chi_square_sf(7.260944, 15) == Approx(0.95).epsilon(1e-5));
}

TEST_CASE("mix_seed and Rng are fixed functions of their inputs") {
  CHECK(mix_seed(0, 0) == mix_seed(0, 0));
  CHECK(mix_seed(0, 1) != mix_seed(0, 0));
  CHECK(mix_seed(1, 0) != mix_seed(0, 0));
  CHECK(mix_seed(12345, 678) < (std::uint64_t{1} << 63));
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  // mt19937_64's 10000th output for the default seed is fixed by the standard.
  Rng ref(5489);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = ref.next_u64();
  CHECK(x == 9981545732273789042ULL);
}

TEST_CASE("normal draws have unit moments") {
  Rng rng(4);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("sample_categorical") {
  const std::vector<double> p{0.0, 0.25, 0.0, 0.75};
  CHECK(sample_categorical(p, 0.0) == 1);
  CHECK(sample_categorical(p, 0.2499) == 1);
  CHECK(sample_categorical(p, 0.25) == 3);
  CHECK(sample_categorical(p, 0.9999999999) == 3);
  // Rounding slack past the total lands on the last positive entry.
  CHECK(sample_categorical(std::vector<double>{0.5, 0.4999999, 0.0}, 0.99999999) == 1);
}

TEST_CASE("empirical next-token frequencies match the softmax") {
  const auto model = ToyModel::random(16, 42);
  const auto spec = spec_for(model, 0);
  const double t = 1.3;
  const auto probs = softmax_temperature(next_token_logits(model, spec, {}), t);

  auto one_token = model;
  one_token.max_len = 1;
  std::vector<double> counts(16, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto r = generate(one_token, spec, t, static_cast<std::int64_t>(mix_seed(7, static_cast<std::uint64_t>(i))));
    counts[static_cast<std::size_t>(r.steps[0].token_id)] += 1.0;
  }
  // Pool sparse cells so that every expected count is at least 5.
  double stat = 0.0, pooled_obs = 0.0, pooled_exp = 0.0;
  int cells = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = probs[i] * n;
    if (e < 5.0) {
      pooled_obs += counts[i];
      pooled_exp += e;
      continue;
    }
    stat += (counts[i] - e) * (counts[i] - e) / e;
    ++cells;
  }
  if (pooled_exp > 0.0) {
    stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++cells;
  }
  const double p_value = chi_square_sf(stat, cells - 1);
  INFO("chi2 = " << stat << ", cells = " << cells << ", p = " << p_value);
  CHECK(p_value > 0.001);
}

TEST_CASE("generated records are well-formed and exact") {
  const auto model = ToyModel::random(16, 5);
  const auto spec = spec_for(model, 3);
  for (double t : {0.25, 0.5, 1.0, 2.0}) {
    for (std::int64_t seed = 0; seed < 20; ++seed) {
      const auto r = generate(model, spec, t, seed);
      CHECK(validate_record(r).empty());
      CHECK(r.steps.size() <= model.max_len);
      CHECK((r.steps.back().token_id == model.eos_token || r.steps.size() == model.max_len));
      std::vector<std::int64_t> prefix;
      for (const auto& s : r.steps) {
        const auto logits = next_token_logits(model, spec, prefix);
        const auto p = softmax_temperature(logits, t);
        CHECK(s.topk.size() == model.vocab_size);
        CHECK(s.raw_logits_topk->size() == model.vocab_size);
        CHECK(std::abs(std::exp(s.logp) - p[static_cast<std::size_t>(s.token_id)]) <= 1e-12);
        CHECK(s.topk[static_cast<std::size_t>(s.rank - 1)].token == s.token_id);
        // Rank counts strictly larger logits, ties resolved toward lower ids.
        std::int64_t above = 0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
          const double li = logits[i], lc = logits[static_cast<std::size_t>(s.token_id)];
          if (li > lc || (li == lc && static_cast<std::int64_t>(i) < s.token_id)) ++above;
        }
        CHECK(s.rank == above + 1);
        CHECK(StepDistribution::from_step(s).residual_mass <= 1e-12);
        prefix.push_back(s.token_id);
      }
    }
  }
}

TEST_CASE("T = 0 is the stepwise argmax path and reproducible") {
  const auto model = ToyModel::random(16, 6);
  const auto spec = spec_for(model, 1);
  const auto a = generate(model, spec, 0.0, 1);
  auto b = generate(model, spec, 0.0, 999);
  b.seed = a.seed;
  CHECK(serialize_record(a) == serialize_record(b));
  std::vector<std::int64_t> prefix;
  for (const auto& s : a.steps) {
    const auto logits = next_token_logits(model, spec, prefix);
    const auto p = softmax_temperature(logits, 0.0);
    CHECK(p[static_cast<std::size_t>(s.token_id)] == 1.0);
    CHECK(s.rank == 1);
    CHECK(s.logp == 0.0);
    prefix.push_back(s.token_id);
  }
}

TEST_CASE("same seed gives identical records") {
  const auto model = ToyModel::random(16, 8);
  const auto spec = spec_for(model, 2);
  CHECK(generate(model, spec, 1.0, 77) == generate(model, spec, 1.0, 77));
  CHECK_FALSE(generate(model, spec, 1.0, 77) == generate(model, spec, 1.0, 78));
}

TEST_CASE("model construction") {
  const auto m = ToyModel::random(16, 1);
  CHECK_NOTHROW(m.check());
  // eos is reachable from every row at T = 1.
  for (std::int64_t r = 0; r < 16; ++r) {
    const auto row = m.row(r);
    const auto p = softmax_temperature(std::vector<double>(row.begin(), row.end()), 1.0);
    CHECK(p[0] > 0.0);
  }
  auto bad = m;
  bad.transition_logits[3] = std::nan("");
  CHECK_THROWS_AS(bad.check(), Error);
  bad = m;
  bad.transition_logits.pop_back();
  CHECK_THROWS_AS(bad.check(), Error);
  bad = m;
  bad.eos_token = 16;
  CHECK_THROWS_AS(bad.check(), Error);
  CHECK_THROWS_AS(ToyModel::random(1, 0), Error);
}

TEST_CASE("dataset balance, determinism and structure") {
  const auto model = ToyModel::random(16, 3);
  DatasetParams p;
  p.n_queries = 4;
  p.samples_per_delta_t = 3;
  const auto ds = make_dataset(model, p);
  REQUIRE(ds.size() == 4);
  CHECK(std::count_if(ds.begin(), ds.end(), [](const QueryBundle& b) { return *b.label; }) == 2);
  for (const auto& b : ds) {
    CHECK(validate_bundle(b).empty());
    CHECK(b.base.temperature == 0.5);
    CHECK(b.perturbations.size() == 3);
    for (const auto& [dt, records] : b.perturbations) {
      CHECK(records.size() == 3);
      for (const auto& r : records) {
        CHECK(r.cluster == r.steps.front().token_id);
        CHECK_FALSE(r.label.has_value());
      }
    }
    CHECK(b.base.label == b.label);
  }
  CHECK(dataset_digest(ds) == dataset_digest(make_dataset(model, p)));
  p.seed = 1;
  CHECK(dataset_digest(ds) != dataset_digest(make_dataset(model, p)));

  p.n_queries = 3;
  CHECK_THROWS_AS(make_dataset(model, p), Error);
  p.n_queries = 4;
  p.delta_ts = {1.0, 0.5};
  CHECK_THROWS_AS(make_dataset(model, p), Error);
  p.delta_ts = {0.5};
  p.sharpness_low = 0.0;
  CHECK_THROWS_AS(make_dataset(model, p), Error);
}

TEST_CASE("clusters can be left off") {
  const auto model = ToyModel::random(16, 3);
  DatasetParams p;
  p.n_queries = 2;
  p.samples_per_delta_t = 2;
  p.assign_clusters = false;
  for (const auto& b : make_dataset(model, p)) CHECK_FALSE(b.base.cluster.has_value());
}

TEST_CASE("low-sharpness base records carry more entropy on average") {
  const auto model = ToyModel::random(16, 0x6d6f64656c);
  DatasetParams p;
  p.n_queries = 100;
  p.samples_per_delta_t = 1;
  double low = 0.0, high = 0.0;
  for (const auto& b : make_dataset(model, p)) {
    const double h = sequence_entropy(b.base, Normalization::PerTokenMean, EntropyTail::LumpResidual);
    (*b.label ? low : high) += h;
  }
  CHECK(low > high);
}

TEST_CASE("mean sequence entropy rises with temperature") {
  const auto model = ToyModel::random(16, 13);
  for (std::size_t q = 0; q < 4; ++q) {
    const auto spec = spec_for(model, q);
    double prev = -1.0;
    for (double t : {0.25, 0.5, 1.0, 1.5, 2.0, 3.0}) {
      double total = 0.0;
      const int seeds = 400;
      for (int s = 0; s < seeds; ++s) {
        total += sequence_entropy(generate(model, spec, t, s), Normalization::PerTokenMean,
                                  EntropyTail::LumpResidual);
      }
      const double mean = total / seeds;
      CHECK(mean > prev);
      prev = mean;
    }
  }
}

TEST_CASE("brute-force path distribution") {
  const auto model = ToyModel::random(6, 2);
  const auto spec = spec_for(model, 0);
  for (std::size_t horizon : {1u, 2u, 3u, 4u}) {
    const auto d = brute_force_expectations(model, spec, 1.0, horizon);
    CHECK(std::abs(d.total_probability() - 1.0) <= 1e-9);
  }
  CHECK_THROWS_AS(brute_force_expectations(ToyModel::random(16, 1), spec_for(ToyModel::random(16, 1), 0), 1.0, 6),
                  Error);
  try {
    brute_force_expectations(ToyModel::random(16, 1), spec_for(ToyModel::random(16, 1), 0), 1.0, 6);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EnumerationTooLarge);
  }
  CHECK_NOTHROW(brute_force_expectations(ToyModel::random(10, 1), spec_for(ToyModel::random(10, 1), 0), 1.0, 6));
}

TEST_CASE("horizon 1 with two tokens gives the two softmax probabilities") {
  ToyModel m;
  m.vocab_size = 2;
  m.transition_logits = {0.0, 0.0, 0.0, 0.0};
  SyntheticQuerySpec spec;
  spec.initial_logits = {0.3, -0.9};
  const auto d = brute_force_expectations(m, spec, 0.7, 1);
  REQUIRE(d.paths.size() == 2);
  const auto p = softmax_temperature(spec.initial_logits, 0.7);
  CHECK(d.paths[0].tokens == std::vector<std::int64_t>{0});
  CHECK(d.paths[0].probability == Approx(p[0]).epsilon(1e-15));
  CHECK(d.paths[1].probability == Approx(p[1]).epsilon(1e-15));
}

TEST_CASE("Monte Carlo variations agree with exact expectations") {
  auto model = ToyModel::random(8, 31);
  model.max_len = 3;
  const auto spec = spec_for(model, 0);
  ScoreConfig config;
  const double t0 = 0.5;
  const auto base = generate(model, spec, t0, 5);
  const std::size_t n = 10000;
  for (double dt : config.delta_ts) {
    const auto exact = exact_variations(brute_force_expectations(model, spec, t0 + dt, model.max_len), base, config);
    CHECK(exact.delta_t == Approx(dt).epsilon(1e-15));
    QueryBundle b;
    b.query_id = spec.query_id;
    b.base = base;
    auto& records = b.perturbations[dt];
    for (std::size_t l = 0; l < n; ++l) {
      records.push_back(as_perturbation(generate(model, spec, t0 + dt, static_cast<std::int64_t>(mix_seed(static_cast<std::uint64_t>(dt * 1000), l))),
                                        t0, dt, static_cast<std::int64_t>(l)));
    }
    const double fb = sequence_free_energy(base, config.normalization);
    const double hb = sequence_entropy(base, config.normalization, config.entropy_tail);
    std::vector<double> fs, ps, hs;
    for (const auto& r : records) {
      const double f = sequence_free_energy(r, config.normalization);
      const bool differ = paths_differ(r, base, config.path_equality);
      fs.push_back(f - fb);
      ps.push_back(differ ? f - fb : 0.0);
      hs.push_back(differ ? t0 * (sequence_entropy(r, config.normalization, config.entropy_tail) - hb) : 0.0);
    }
    auto stderr_of = [](const std::vector<double>& xs) {
      const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
      double ss = 0.0;
      for (double x : xs) ss += (x - m) * (x - m);
      return std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
    };
    const auto mc = variation_triple(b, dt, config);
    CHECK(std::abs(mc.delta_b - exact.delta_b) <= 3.0 * stderr_of(fs));
    CHECK(std::abs(mc.delta_p - exact.delta_p) <= 3.0 * stderr_of(ps));
    CHECK(std::abs(mc.delta_th - exact.delta_th) <= 3.0 * stderr_of(hs));
  }
}
