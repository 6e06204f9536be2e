#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "watch/betting.hpp"
#include "watch/changepoint.hpp"

using namespace watch;
using Catch::Approx;

namespace {

// Literal sum_{i = start}^{t-1} M_t / M_i, with M_0 = 1 in front of the path.
double sr_literal(const std::vector<double>& m, std::size_t start, std::size_t t) {
  double s = 0.0;
  for (std::size_t i = start; i < t; ++i) s += m[t] / m[i];
  return s;
}

}  // namespace

TEST_CASE("Ville threshold") {
  CHECK_FALSE(ville_alarm(1.0, 20.0));
  CHECK(ville_alarm(20.0, 20.0));
  CHECK_THROWS_AS(ville_alarm(5.0, 1.0), config_error);
  CHECK_THROWS_AS(ville_alarm(5.0, 0.5), config_error);
}

TEST_CASE("Ville crossings under the null stay near 1/c") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int runs = 2000;
  int hits10 = 0, hits100 = 0;
  for (int r = 0; r < runs; ++r) {
    CompositeJumper c;
    double peak = 1.0;
    for (int t = 0; t < 1000; ++t) {
      c.step(unif(rng));
      peak = std::max(peak, c.wealth());
    }
    hits10 += peak >= 10.0;
    hits100 += peak >= 100.0;
  }
  auto bound = [&](double c) { return 1.0 / c + 3.0 * std::sqrt((1.0 / c) * (1.0 - 1.0 / c) / runs); };
  CHECK(hits10 / double(runs) <= bound(10.0));
  CHECK(hits100 / double(runs) <= bound(100.0));
}

TEST_CASE("SR with constant wealth alarms every c steps") {
  SRState st;
  std::vector<std::int64_t> alarms;
  for (std::int64_t t = 1; t <= 200; ++t) {
    const auto r = sr_update(st, t, 1.0, 50.0);
    st = r.state;
    if (r.alarm) alarms.push_back(t);
  }
  CHECK(alarms == std::vector<std::int64_t>{50, 100, 150, 200});
  CHECK(st.stage == 5);
}

TEST_CASE("SR on a doubling path") {
  SRState st;
  double s3 = 0.0;
  for (std::int64_t t = 1; t <= 3; ++t) {
    const auto r = sr_update(st, t, std::ldexp(1.0, static_cast<int>(t)), 1e9);
    st = r.state;
    s3 = r.statistic;
  }
  CHECK(s3 == 14.0);
}

TEST_CASE("incremental SR equals the literal double sum") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> step(0.0, 0.05);
  for (double c : {1e300, 200.0}) {
    std::vector<double> m{1.0};
    SRState st;
    std::size_t start = 0;
    double worst = 0.0;
    for (std::size_t t = 1; t <= 10000; ++t) {
      m.push_back(m.back() * std::exp(step(rng)));
      const auto r = sr_update(st, static_cast<std::int64_t>(t), m[t], c);
      const double lit = sr_literal(m, start, t);
      worst = std::max(worst, std::abs(r.statistic - lit) / lit);
      REQUIRE(r.alarm == (lit >= c));
      st = r.state;
      if (r.alarm) start = t;
    }
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("SR and CUSUM reject nonpositive wealth") {
  CHECK_THROWS_AS(sr_update(SRState{}, 1, 0.0, 10.0), numeric_error);
  CHECK_THROWS_AS(cusum_update(CUSUMState{}, 1, -1.0, 10.0), numeric_error);
  CHECK_THROWS_AS(sr_update(SRState{}, 1, 1.0, 1.0), config_error);
}

TEST_CASE("CUSUM") {
  CUSUMState st;
  for (std::int64_t t = 1; t <= 100; ++t) {
    const auto r = cusum_update(st, t, 1.0, 10.0);
    REQUIRE_FALSE(r.alarm);
    REQUIRE(r.statistic == 1.0);
    st = r.state;
  }

  CUSUMState s2;
  const double path[] = {1.0, 0.5, 5.0};
  CUSUMStep last{};
  for (std::int64_t t = 1; t <= 3; ++t) {
    last = cusum_update(s2, t, path[t - 1], 9.0);
    s2 = last.state;
  }
  CHECK(last.statistic == 10.0);
  CHECK(last.alarm);
  CHECK(s2.stage_start == 3);
}

TEST_CASE("CUSUM null run length") {
  // Mean run length to the first alarm at c = 1000 over 200 null runs.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::int64_t cap = 100'000;  // capping only lowers the mean
  double total = 0.0;
  for (int r = 0; r < 200; ++r) {
    CompositeJumper c;
    CUSUMState st;
    std::int64_t t = 1;
    for (; t <= cap; ++t) {
      c.step(unif(rng));
      const auto s = cusum_update(st, t, c.wealth(), 1000.0);
      st = s.state;
      if (s.alarm) break;
    }
    total += static_cast<double>(std::min(t, cap));
  }
  CHECK(total / 200.0 >= 500.0);
}
