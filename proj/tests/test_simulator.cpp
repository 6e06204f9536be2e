#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "stats.hpp"
#include "watch/conformal.hpp"
#include "watch/simulator.hpp"

using namespace watch;
using Catch::Approx;

TEST_CASE("source sampling") {
  Scenario sc = preset("none");
  CHECK_THROWS_AS(sample_source(sc, 0), config_error);

  sc.seed = 17;
  const auto a = sample_source(sc, 20000);
  const auto b = sample_source(sc, 20000);
  REQUIRE(a.size() == 20000);
  CHECK(a[123].x == b[123].x);
  CHECK(a[19999].label == b[19999].label);

  std::vector<double> x0, resid;
  for (const auto& e : a) {
    x0.push_back(e.x[0]);
    resid.push_back(e.label - sc.source.predict(e.x));
  }
  const auto m = watch_test::mean_sd(x0);
  const double sd = sc.source.feature_scale[0];
  CHECK(std::abs(m.mean - sc.source.feature_mean[0]) <= 3.0 * sd / std::sqrt(20000.0));
  CHECK(m.sd == Approx(sd).epsilon(0.03));
  CHECK(std::abs(watch_test::mean_sd(resid).mean) <= 0.03);
}

TEST_CASE("zero tilt is uniform over the pool") {
  Scenario sc = preset("none");
  sc.seed = 3;
  const auto pool = sample_source(sc, 50);
  TiltedSampler s(pool, [&](std::span<const double> x) { return sc.h(x); }, 0.0);
  for (double p : s.probabilities()) REQUIRE(p == Approx(1.0 / 50));
  std::mt19937_64 rng(4);
  std::vector<double> draws;
  for (int i = 0; i < 50000; ++i) draws.push_back((static_cast<double>(s(rng)) + 0.5) / 50.0);
  CHECK(watch_test::chi2_uniform_pvalue(draws, 50) > 0.001);
}

TEST_CASE("two-point tilt") {
  std::vector<Example> pool{{{0.0}, 0.0}, {{1.0}, 0.0}};
  const auto p = tilt_probabilities(pool, [](std::span<const double> x) { return x[0]; }, 5.0);
  CHECK(p[1] / p[0] == Approx(std::exp(5.0)));
  CHECK(p[0] + p[1] == Approx(1.0));
  std::mt19937_64 rng(5);
  int ones = 0;
  for (int i = 0; i < 100000; ++i) ones += &tilted_sample(pool, [](std::span<const double> x) { return x[0]; }, 5.0, rng) == &pool[1];
  const double expect = std::exp(5.0) / (1.0 + std::exp(5.0));
  CHECK(std::abs(ones / 1e5 - expect) <= 3.0 * std::sqrt(expect * (1 - expect) / 1e5));
  CHECK_THROWS_AS(tilt_probabilities({}, [](std::span<const double>) { return 0.0; }, 1.0), invalid_input);
}

TEST_CASE("tabular analog presets carry their lambda values") {
  CHECK(preset("meps").tilt_lambda == 5.0);
  CHECK(preset("superconductivity").tilt_lambda == 2.5);
  CHECK(preset("bike").tilt_lambda == 5.0);
  for (const auto& n : preset_names()) CHECK_NOTHROW(preset(n).validate());
  CHECK_THROWS_AS(preset("weather"), config_error);
}

TEST_CASE("concept map") {
  Scenario sc = preset("fig1c");
  std::vector<double> xs(sc.source.dim(), 0.3);
  sc.concept_delta = 0.0;
  CHECK(apply_concept_shift(xs, 2.5, sc) == 2.5);
  sc.concept_delta = 3.0;
  sc.concept_map = {IndexFunction::Shape::constant, 1.0, 0.0};
  CHECK(apply_concept_shift(xs, 2.5, sc) == Approx(5.5));
  CHECK_THROWS_AS(apply_concept_shift(xs, 1.0, preset("fig1a")), invalid_input);

  // The default preset moves residuals by more than twice the source spread.
  Scenario c = preset("fig1c");
  c.seed = 8;
  c.n_calibration = 2000;
  c.changepoint = 1;
  c.horizon = 2001;
  const auto s = generate_stream(c);
  std::vector<double> pre, post;
  for (const auto& p : s.calibration) pre.push_back(p.label - p.prediction);
  for (const auto& e : s.events) {
    if (e.index > 1) post.push_back(e.label - e.prediction);
  }
  const auto a = watch_test::mean_sd(pre);
  const auto b = watch_test::mean_sd(post);
  CHECK(b.mean - a.mean > 2.0 * a.sd);
}

TEST_CASE("oracle ratio") {
  Scenario sc = preset("fig1a");
  sc.seed = 9;
  const auto pool = sample_source(sc, 2000);
  Scenario flat = sc;
  flat.tilt_lambda = 0.0;
  const auto one = oracle_ratio(flat, pool);
  CHECK(one(pool[5].x) == Approx(1.0));
  // Ratios average to one over the pool and match the draw probabilities.
  const auto r = oracle_ratio(sc, pool);
  const auto p = tilt_probabilities(pool, [&](std::span<const double> x) { return sc.h(x); }, sc.tilt_lambda);
  double mean = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    mean += r(pool[i].x) / pool.size();
    REQUIRE(r(pool[i].x) == Approx(p[i] * pool.size()).epsilon(1e-10));
  }
  CHECK(mean == Approx(1.0));
  CHECK_THROWS_AS(oracle_ratio(preset("fig1c"), pool), invalid_input);
  CHECK_THROWS_AS(oracle_ratio(sc, {}), invalid_input);
}

TEST_CASE("oracle-weighted intervals cover under covariate shift") {
  // Calibration and pool share the source law; test points follow the tilt.
  Scenario sc = preset("fig1a");
  sc.seed = 10;
  sc.pool_size = 20000;
  const auto pool = sample_source(sc, sc.pool_size);
  const auto ratio = oracle_ratio(sc, pool);
  TiltedSampler tilt(pool, [&](std::span<const double> x) { return sc.h(x); }, sc.tilt_lambda);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> any(0, pool.size() - 1);

  const int trials = 200, per_trial = 50, n = 200;
  std::size_t covered = 0, total = 0, naive = 0;
  for (int tr = 0; tr < trials; ++tr) {
    std::vector<double> scores(n);
    std::vector<double> masses(n + 1);
    for (int i = 0; i < n; ++i) {
      const auto& e = pool[any(rng)];
      scores[i] = std::abs(e.label - sc.source.predict(e.x));
      masses[i] = ratio(e.x);
    }
    for (int k = 0; k < per_trial; ++k) {
      const auto& e = pool[tilt(rng)];
      masses[n] = ratio(e.x);
      const auto q = weighted_quantile(scores, WeightVector::from_masses(masses), 0.1);
      const auto iv = prediction_interval(sc.source.predict(e.x), q);
      covered += iv.contains(e.label);
      const auto qu = weighted_quantile(scores, WeightVector::uniform(n + 1), 0.1);
      naive += prediction_interval(sc.source.predict(e.x), qu).contains(e.label);
      ++total;
    }
  }
  CHECK(double(covered) / total == Approx(0.9).margin(0.03));
  CHECK(naive > covered);  // unweighted intervals over-cover the low-noise region
}

TEST_CASE("stream generation") {
  Scenario sc = preset("fig1b");
  sc.seed = 12;
  sc.n_calibration = 200;
  sc.pool_size = 3000;
  sc.horizon = 400;
  sc.changepoint = 100;
  const auto a = generate_stream(sc);
  const auto b = generate_stream(sc);
  REQUIRE(a.events.size() == 400);
  CHECK(a.events[399].x == b.events[399].x);
  CHECK(a.calibration[7].label == b.calibration[7].label);
  for (std::size_t i = 0; i < a.events.size(); ++i) REQUIRE(a.events[i].index == std::int64_t(i) + 1);

  // Post-change points sit in the tilted tail.
  double pre = 0.0, post = 0.0;
  for (const auto& e : a.events) (e.index <= 100 ? pre : post) += sc.source.index(e.x);
  CHECK(post / 300.0 > 2.0);
  CHECK(pre / 100.0 < 1.0);

  // Kind none ignores the changepoint entirely.
  Scenario n1 = preset("none"), n2 = preset("none");
  n1.seed = n2.seed = 13;
  n1.n_calibration = n2.n_calibration = 50;
  n1.horizon = n2.horizon = 300;
  n1.changepoint = 10;
  n2.changepoint = 250;
  const auto s1 = generate_stream(n1), s2 = generate_stream(n2);
  for (std::size_t i = 0; i < 300; ++i) REQUIRE(s1.events[i].label == s2.events[i].label);
  CHECK(s1.pool.empty());

  Scenario bad = sc;
  bad.horizon = 0;
  CHECK_THROWS_AS(generate_stream(bad), config_error);
}
