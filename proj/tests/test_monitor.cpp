#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "watch/io.hpp"
#include "watch/monitor.hpp"
#include "watch/simulator.hpp"

using namespace watch;
using Catch::Approx;

namespace {

SimulatedStream small_stream(const char* name, std::uint64_t seed, std::size_t n_cal = 300, std::int64_t horizon = 800) {
  Scenario sc = preset(name);
  sc.n_calibration = n_cal;
  sc.pool_size = 5000;
  sc.horizon = horizon;
  sc.changepoint = 200;
  sc.seed = seed;
  return generate_stream(sc);
}

std::string log_line(const StreamEvent& ev, const StepOutcome& o) { return io::log_record(ev, o).dump(); }

// Full-online nearest-neighbour X-CTM p-value on squared standardized distances.
double xctm_oracle(const std::vector<feature_vector>& bag_z, const feature_vector& z, double u) {
  auto d2 = [](const feature_vector& a, const feature_vector& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };
  std::vector<double> scores(bag_z.size(), INFINITY);
  double test = INFINITY;
  for (std::size_t i = 0; i < bag_z.size(); ++i) {
    for (std::size_t j = 0; j < bag_z.size(); ++j) {
      if (i != j) scores[i] = std::min(scores[i], d2(bag_z[i], bag_z[j]));
    }
    scores[i] = std::min(scores[i], d2(bag_z[i], z));
    test = std::min(test, d2(bag_z[i], z));
  }
  return standard_p_value(scores, test, u).value;
}

}  // namespace

TEST_CASE("root-cause decision table") {
  CHECK(root_cause(150.0, true, 100.0, true) == VerdictKind::extreme_covariate_shift);
  CHECK(root_cause(2.0, true, 100.0, false) == VerdictKind::concept_shift);
  CHECK(root_cause(150.0, false, 100.0, true) == VerdictKind::benign_adapted);
  CHECK(root_cause(2.0, false, 100.0, false) == VerdictKind::no_shift);
  CHECK(root_cause(100.0, true, 100.0, true) == VerdictKind::extreme_covariate_shift);  // inclusive
  CHECK(to_string(VerdictKind::concept_shift) == "concept-shift");
  CHECK(verdict_from_string("benign-adapted") == VerdictKind::benign_adapted);
}

TEST_CASE("monitor config validation") {
  const auto s = small_stream("none", 1, 50, 10);
  MonitorConfig cfg;
  cfg.c_alarm = 1.0;
  CHECK_THROWS_AS(Monitor(cfg, s.calibration), config_error);
  cfg = {};
  cfg.alpha = 1.0;
  CHECK_THROWS_AS(Monitor(cfg, s.calibration), config_error);
  cfg = {};
  cfg.jump_grid = {0.5, 2.0};
  CHECK_THROWS_AS(Monitor(cfg, s.calibration), config_error);
  cfg = {};
  cfg.estimator.mode = EstimatorMode::oracle;
  CHECK_THROWS_AS(Monitor(cfg, s.calibration), config_error);
  CHECK_THROWS_AS(Monitor(MonitorConfig{}, {}), invalid_input);
  CHECK(post_alarm_from_string("halt") == PostAlarmPolicy::halt);
  CHECK_THROWS_AS(post_alarm_from_string("panic"), config_error);
}

TEST_CASE("events must arrive in order") {
  const auto s = small_stream("none", 2, 50, 10);
  Monitor m(MonitorConfig{}, s.calibration);
  auto ev = s.events[0];
  ev.index = 2;
  CHECK_THROWS_AS(m.observe(ev), sequencing_error);
  m.observe(s.events[0]);
  CHECK_THROWS_AS(m.observe(s.events[0]), sequencing_error);
  auto bad = s.events[1];
  bad.x.push_back(1.0);
  CHECK_THROWS_AS(m.observe(bad), invalid_input);
  bad = s.events[1];
  bad.label = NAN;
  CHECK_THROWS_AS(m.observe(bad), invalid_input);
}

TEST_CASE("before adaptation the WCTM is the standard online CTM") {
  const auto s = small_stream("fig1a", 3);
  MonitorConfig cfg;
  cfg.seed = 99;
  cfg.adapt = false;
  Monitor m(cfg, s.calibration);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> cal;
  for (const auto& p : s.calibration) cal.push_back(std::abs(p.label - p.prediction));
  CompositeJumper ref;
  for (const auto& ev : s.events) {
    (void)unif(rng);
    const double u = unif(rng);
    const double score = std::abs(ev.label - ev.prediction);
    const double p = standard_p_value(cal, score, u).value;
    const auto q = weighted_quantile(cal, WeightVector::uniform(cal.size() + 1), cfg.alpha);
    ref.step(p);
    const auto o = m.observe(ev);
    REQUIRE(o.p_z.value == p);
    REQUIRE(o.wealth_w == ref.wealth());
    REQUIRE(o.interval.width() == prediction_interval(ev.prediction, q).width());
    cal.push_back(score);
  }
  CHECK(m.calibration_size() == s.calibration.size() + s.events.size());
}

TEST_CASE("X-CTM matches the full-online nearest-neighbour oracle") {
  const auto s = small_stream("fig1b", 4, 60, 120);
  MonitorConfig cfg;
  cfg.seed = 5;
  cfg.adapt = false;
  Monitor m(cfg, s.calibration);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<feature_vector> bag;
  for (const auto& p : s.calibration) bag.push_back(m.standardizer().apply(p.x));
  for (const auto& ev : s.events) {
    const double u = unif(rng);
    (void)unif(rng);
    const auto z = m.standardizer().apply(ev.x);
    const double p = xctm_oracle(bag, z, u);
    REQUIRE(m.observe(ev).p_x.value == p);
    bag.push_back(z);
  }
}

TEST_CASE("a constant ratio after adaptation reproduces uniform weights on the frozen set") {
  const auto s = small_stream("fig1b", 6);
  MonitorConfig cfg;
  cfg.seed = 7;
  cfg.estimator.mode = EstimatorMode::oracle;
  Monitor m(cfg, s.calibration, [](std::span<const double>) { return 1.0; });

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> cal;
  for (const auto& p : s.calibration) cal.push_back(std::abs(p.label - p.prediction));
  CompositeJumper ref;
  bool frozen = false;
  std::size_t post = 0;
  for (const auto& ev : s.events) {
    (void)unif(rng);
    const double u = unif(rng);
    const auto o = m.observe(ev);
    frozen = frozen || o.adapted;
    const double score = std::abs(ev.label - ev.prediction);
    ref.step(standard_p_value(cal, score, u).value);
    REQUIRE(o.wealth_w == Approx(ref.wealth()).epsilon(1e-12));
    if (!frozen) cal.push_back(score);
    post += frozen;
  }
  CHECK(m.adapted());
  CHECK(post > 100);
  CHECK(m.calibration_size() == cal.size());
}

TEST_CASE("adaptation freezes calibration and starts the estimator") {
  const auto s = small_stream("fig1b", 8);
  Monitor m(MonitorConfig{}, s.calibration);
  std::size_t size_at_ad = 0;
  int verdicts = 0;
  for (const auto& ev : s.events) {
    const auto o = m.observe(ev);
    if (o.verdict) {
      ++verdicts;
      const bool ville = std::any_of(o.alarms.begin(), o.alarms.end(),
                                     [](const AlarmRecord& a) { return a.procedure == Procedure::ville; });
      REQUIRE((ville || o.t == m.adaptation_time()));
    }
    if (m.adapted() && size_at_ad == 0) size_at_ad = m.calibration_size();
  }
  REQUIRE(m.adapted());
  CHECK(*m.adaptation_time() > 200);
  CHECK(m.calibration_size() == size_at_ad);
  CHECK(m.estimator().has_value());
  CHECK(m.estimator()->step_count() > 0);
  CHECK(verdicts >= 1);
  CHECK(verdicts <= 2);
}

TEST_CASE("identical inputs give identical outcomes") {
  const auto s = small_stream("fig1a", 9);
  MonitorConfig cfg;
  cfg.baseline_ctm = true;
  Monitor a(cfg, s.calibration), b(cfg, s.calibration);
  for (const auto& ev : s.events) REQUIRE(log_line(ev, a.observe(ev)) == log_line(ev, b.observe(ev)));
}

TEST_CASE("snapshot round trips") {
  const auto s = small_stream("fig1b", 10, 300, 700);
  for (auto mode : {EstimatorMode::logistic, EstimatorMode::mlp}) {
    MonitorConfig cfg;
    cfg.estimator.mode = mode;
    cfg.baseline_ctm = true;
    for (std::size_t cut : {std::size_t{0}, std::size_t{100}, std::size_t{250}, std::size_t{450}}) {
      Monitor ref(cfg, s.calibration);
      Monitor live(cfg, s.calibration);
      for (std::size_t i = 0; i < cut; ++i) {
        ref.observe(s.events[i]);
        live.observe(s.events[i]);
      }
      Monitor restored = Monitor::restore(live.snapshot());
      CHECK(restored.snapshot() == live.snapshot());
      for (std::size_t i = cut; i < s.events.size(); ++i) {
        REQUIRE(log_line(s.events[i], restored.observe(s.events[i])) ==
                log_line(s.events[i], ref.observe(s.events[i])));
      }
    }
  }
}

TEST_CASE("oracle snapshots need the ratio function again") {
  const auto s = small_stream("fig1b", 11, 200, 500);
  MonitorConfig cfg;
  cfg.estimator.mode = EstimatorMode::oracle;
  auto fn = [](std::span<const double> x) { return 1.0 + 0.01 * x[0]; };
  Monitor m(cfg, s.calibration, fn);
  for (std::size_t i = 0; i < 400; ++i) m.observe(s.events[i]);
  REQUIRE(m.adapted());
  CHECK_THROWS_AS(Monitor::restore(m.snapshot()), restore_error);
  Monitor r = Monitor::restore(m.snapshot(), fn);
  Monitor& live = m;
  for (std::size_t i = 400; i < s.events.size(); ++i) {
    REQUIRE(log_line(s.events[i], r.observe(s.events[i])) == log_line(s.events[i], live.observe(s.events[i])));
  }
}

TEST_CASE("corrupt snapshots are rejected") {
  const auto s = small_stream("none", 12, 50, 20);
  Monitor m(MonitorConfig{}, s.calibration);
  for (const auto& ev : s.events) m.observe(ev);
  const std::string good = m.snapshot();

  std::string flipped = good;
  const auto pos = flipped.find("cal_scores");
  flipped[pos + 20] = flipped[pos + 20] == 'a' ? 'b' : 'a';
  CHECK_THROWS_AS(Monitor::restore(flipped), restore_error);
  CHECK_THROWS_AS(Monitor::restore(good.substr(0, good.size() / 2)), restore_error);
  CHECK_THROWS_AS(Monitor::restore("not json"), restore_error);

  auto env = nlohmann::json::parse(good);
  env["format"] = "watch-snapshot/0";
  CHECK_THROWS_AS(Monitor::restore(env.dump()), restore_error);
  env = nlohmann::json::parse(good);
  env["checksum"] = "0000000000000000";
  CHECK_THROWS_AS(Monitor::restore(env.dump()), restore_error);
}

TEST_CASE("post-alarm policies") {
  Scenario sc = preset("fig1c");
  sc.n_calibration = 300;
  sc.horizon = 600;
  sc.changepoint = 100;
  sc.concept_delta = 4.0;
  sc.seed = 13;
  const auto s = generate_stream(sc);

  MonitorConfig cfg;
  cfg.post_alarm = PostAlarmPolicy::halt;
  Monitor h(cfg, s.calibration);
  std::size_t i = 0;
  while (!h.halted()) h.observe(s.events[i++]);
  CHECK(i < s.events.size());
  CHECK_THROWS_AS(h.observe(s.events[i]), invalid_state);

  cfg.post_alarm = PostAlarmPolicy::reset;
  Monitor r(cfg, s.calibration);
  int alarms = 0;
  bool reset_seen = false;
  for (const auto& ev : s.events) {
    const auto o = r.observe(ev);
    for (const auto& a : o.alarms) alarms += a.procedure == Procedure::ville;
    if (!o.alarms.empty() && o.alarms.front().procedure == Procedure::ville) {
      reset_seen = r.wctm().wealth() == 1.0;
    }
  }
  CHECK(reset_seen);
  CHECK(alarms >= 2);  // Ville re-arms after a reset

  cfg.post_alarm = PostAlarmPolicy::log_only;
  Monitor l(cfg, s.calibration);
  alarms = 0;
  for (const auto& ev : s.events) {
    for (const auto& a : l.observe(ev).alarms) alarms += a.procedure == Procedure::ville;
  }
  CHECK(alarms == 1);
}

TEST_CASE("concept shift is diagnosed as concept shift") {
  Scenario sc = preset("fig1c");
  sc.seed = 1000;
  const auto s = generate_stream(sc);
  Monitor m(MonitorConfig{}, s.calibration);
  std::optional<Verdict> v;
  for (const auto& ev : s.events) {
    const auto o = m.observe(ev);
    if (o.verdict && !v) v = o.verdict;
  }
  REQUIRE(v.has_value());
  CHECK(v->kind == VerdictKind::concept_shift);
  CHECK(v->t > sc.changepoint);
  CHECK(v->wealth_x < 10.0);
}

TEST_CASE("benign shift adapts without an alarm") {
  Scenario sc = preset("fig1a");
  sc.seed = 1000;
  const auto s = generate_stream(sc);
  Monitor m(MonitorConfig{}, s.calibration);
  bool alarmed = false;
  std::size_t covered = 0, informative = 0, post = 0;
  std::optional<Verdict> first;
  for (const auto& ev : s.events) {
    const auto o = m.observe(ev);
    if (o.verdict && !first) first = o.verdict;
    for (const auto& a : o.alarms) alarmed = alarmed || a.procedure == Procedure::ville;
    if (o.t > sc.changepoint) {
      ++post;
      covered += o.covered;
      informative += o.interval.informative;
    }
  }
  CHECK(m.adapted());
  CHECK_FALSE(alarmed);
  REQUIRE(first.has_value());
  CHECK(first->kind == VerdictKind::benign_adapted);
  CHECK(informative == post);
  CHECK(double(covered) / double(post) == Approx(0.9).margin(0.03));
}

TEST_CASE("delayed labels are released in feature order") {
  DelayedLabelBuffer buf;
  buf.add_features(1, {0.1}, 1.0);
  buf.add_features(2, {0.2}, 2.0);
  buf.add_features(3, {0.3}, 3.0);
  buf.add_label(2, 20.0);
  CHECK(buf.drain().empty());
  buf.add_label(1, 10.0);
  const auto a = buf.drain();
  REQUIRE(a.size() == 2);
  CHECK(a[0].index == 1);
  CHECK(a[1].label == 20.0);
  CHECK(buf.pending() == 1);
  CHECK_THROWS_AS(buf.add_label(9, 1.0), sequencing_error);
  CHECK_THROWS_AS(buf.add_features(2, {0.0}, 0.0), sequencing_error);
  buf.add_label(3, 30.0);
  CHECK(buf.drain().size() == 1);
}
