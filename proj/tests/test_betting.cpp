#include <catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "stats.hpp"
#include "watch/betting.hpp"

using namespace watch;
using Catch::Approx;

namespace {

// Plain three-capital jumper, written from the update rule and kept in
// log-scale so long runs stay representable.
struct CapitalJumper {
  double J;
  std::array<double, 3> c{1.0 / 3, 1.0 / 3, 1.0 / 3};
  double log_scale = 0.0;

  void step(double p) {
    const double w = c[0] + c[1] + c[2];
    for (double& x : c) x = (1.0 - J) * x + J * w / 3.0;
    c[0] *= 1.0 - (p - 0.5);
    c[2] *= 1.0 + (p - 0.5);
    const double s = c[0] + c[1] + c[2];
    for (double& x : c) x /= s;
    log_scale += std::log(s);
  }
  [[nodiscard]] double log_wealth() const { return log_scale; }
};

}  // namespace

TEST_CASE("betting function") {
  CHECK(betting_function(BettingEpsilon::down, 0.1) == Approx(1.4));
  for (double p : {0.0, 0.3, 1.0}) CHECK(betting_function(BettingEpsilon::none, p) == 1.0);
  CHECK(betting_function(BettingEpsilon::up, 1.0) == 1.5);
  // Each h_eps integrates to one over [0, 1] (midpoint rule is exact for lines).
  for (auto e : kAllEpsilons) {
    double s = 0.0;
    for (int i = 0; i < 100; ++i) s += betting_function(e, (i + 0.5) / 100.0) / 100.0;
    CHECK(s == Approx(1.0));
  }
}

TEST_CASE("J = 1 jumper stays at wealth 1") {
  SimpleJumper j(1.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < 5000; ++t) {
    j.step(t % 7 == 0 ? 0.0 : unif(rng));
    REQUIRE(j.wealth() == 1.0);
  }
}

TEST_CASE("first bet is symmetric") {
  SimpleJumper j(0.01);
  j.step(0.0);
  CHECK(j.wealth() == Approx(1.0));
  CHECK(j.capital(BettingEpsilon::down) == Approx(0.5));
  CHECK(j.capital(BettingEpsilon::none) == Approx(1.0 / 3));
  CHECK(j.capital(BettingEpsilon::up) == Approx(1.0 / 6));
}

TEST_CASE("small p-values grow the J = 0.01 jumper") {
  SimpleJumper j(0.01);
  CapitalJumper ref{0.01};
  for (int t = 0; t < 100; ++t) {
    j.step(0.01);
    ref.step(0.01);
  }
  CHECK(j.wealth() > 10.0);
  CHECK(j.log_wealth() == Approx(ref.log_wealth()).epsilon(1e-12));
}

TEST_CASE("simple jumper matches the capital-vector oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (double J : kDefaultJumpGrid) {
    SimpleJumper j(J);
    CapitalJumper ref{J};
    for (int t = 0; t < 20000; ++t) {
      // Skewed p-values push the wealth far from 1 in both directions.
      const double p = t < 10000 ? std::pow(unif(rng), 3.0) : 1.0 - std::pow(unif(rng), 3.0);
      j.step(p);
      ref.step(p);
    }
    CHECK(j.log_wealth() == Approx(ref.log_wealth()).epsilon(1e-9).margin(1e-9));
  }
}

TEST_CASE("wealth survives beyond the double range") {
  SimpleJumper j(0.01);
  CapitalJumper ref{0.01};
  for (int t = 0; t < 3000; ++t) {
    j.step(0.0);
    ref.step(0.0);
  }
  CHECK(std::isfinite(j.log_wealth()));
  CHECK(j.log_wealth() > 709.0);  // past DBL_MAX
  CHECK(j.log_wealth() == Approx(ref.log_wealth()).epsilon(1e-12));
  CHECK(std::isinf(j.wealth()));
  for (int t = 0; t < 6000; ++t) j.step(1.0);
  CHECK(std::isfinite(j.log_wealth()));
}

TEST_CASE("invalid jumper inputs") {
  CHECK_THROWS_AS(SimpleJumper(0.0), config_error);
  CHECK_THROWS_AS(SimpleJumper(1.5), config_error);
  SimpleJumper j(0.1);
  CHECK_THROWS_AS(j.step(-0.1), invalid_input);
  CHECK_THROWS_AS(CompositeJumper(std::vector<double>{}), config_error);
}

TEST_CASE("composite jumper") {
  for (double p : {0.0, 0.2, 0.5, 1.0}) {
    CompositeJumper c;
    c.step(p);
    CHECK(c.wealth() == Approx(1.0));
  }
  CompositeJumper c;
  CHECK(c.components().size() == 5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    c.step(unif(rng));
    double mean = 0.0;
    for (const auto& s : c.components()) mean += s.wealth();
    REQUIRE(c.wealth() == Approx(mean / 5.0));
  }
}

TEST_CASE("composite wealth never drops below 0.2") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 2000; ++rep) {
    CompositeJumper c;
    const int mode = rep % 4;
    for (int t = 0; t < 500; ++t) {
      double p = unif(rng);
      if (mode == 1) p = p < 0.5 ? 1.0 : 0.0;          // whipsaw
      if (mode == 2) p = (t / 25) % 2 ? 0.0 : 1.0;     // alternating regimes
      if (mode == 3) p = 0.5 + 0.5 * std::sin(t * 0.3);
      c.step(p);
      REQUIRE(c.wealth() >= 0.2);
    }
  }
}

TEST_CASE("one-step martingale identity") {
  // E[M_t | past] = M_{t-1} for p ~ Unif[0, 1]; wealth is linear in p, so the
  // midpoint rule computes the expectation exactly.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  CompositeJumper c;
  for (int t = 0; t < 300; ++t) {
    if (t % 30 == 0) {
      double mean = 0.0;
      const int k = 64;
      for (int i = 0; i < k; ++i) {
        CompositeJumper next = c;
        next.step((i + 0.5) / k);
        mean += next.wealth() / k;
      }
      REQUIRE(mean == Approx(c.wealth()).epsilon(1e-12));
    }
    c.step(std::pow(unif(rng), 2.0));
  }
}

TEST_CASE("null mean wealth at t = 100 is 1 within 3 standard errors") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> w;
  for (int s = 0; s < 2000; ++s) {
    CompositeJumper c;
    for (int t = 0; t < 100; ++t) c.step(unif(rng));
    w.push_back(c.wealth());
  }
  const auto m = watch_test::mean_sd(w);
  CHECK(std::abs(m.mean - 1.0) <= 3.0 * m.se);
}

TEST_CASE("replaying a p-sequence reproduces wealth exactly") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> ps(5000);
  for (auto& p : ps) p = unif(rng);
  CompositeJumper a, b;
  for (double p : ps) a.step(p);
  for (double p : ps) b.step(p);
  CHECK(a.wealth() == b.wealth());
  CHECK(a.log_wealth() == b.log_wealth());
}
