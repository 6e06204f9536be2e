#pragma once

// Multi-seed scenario runs: stream generation, monitoring, and summary
// aggregation. Seeds run on a small worker pool; results come back in seed
// order, so the report does not depend on scheduling.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "watch/metrics.hpp"
#include "watch/monitor.hpp"
#include "watch/simulator.hpp"

namespace watch {

inline ShiftClass shift_class_of(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::none: return ShiftClass::none;
    case ScenarioKind::benign_covariate: return ShiftClass::benign;
    case ScenarioKind::extreme_covariate:
    case ScenarioKind::concept_shift: return ShiftClass::harmful;
  }
  return ShiftClass::none;
}

// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency).
// The first exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

using StepObserver = std::function<void(const StreamEvent&, const StepOutcome&)>;

// Feeds every event to a fresh monitor; stops early under the halt policy.
inline RunSummary run_stream(const MonitorConfig& cfg, const std::vector<LabeledPoint>& calibration,
                             const std::vector<StreamEvent>& events, std::optional<std::int64_t> changepoint,
                             std::size_t trace_window = 100, bool keep_traces = false, Monitor::RatioFn oracle = {},
                             const StepObserver& observer = {}) {
  Monitor m(cfg, calibration, std::move(oracle));
  RunRecorder rec(changepoint, trace_window, keep_traces);
  for (const auto& ev : events) {
    if (m.halted()) break;
    const StepOutcome o = m.observe(ev);
    rec.record(o);
    if (observer) observer(ev, o);
  }
  return rec.finish();
}

struct SeedPlan {
  Scenario scenario;   // seed k uses scenario.seed + k
  MonitorConfig config;  // seed k uses config.seed + k
  std::size_t seeds = 1;
  std::size_t trace_window = 100;
  bool keep_traces = false;
  std::size_t threads = 0;
};

inline Scenario scenario_for_seed(const SeedPlan& plan, std::size_t k) {
  Scenario sc = plan.scenario;
  sc.seed += k;
  return sc;
}

inline MonitorConfig config_for_seed(const SeedPlan& plan, std::size_t k) {
  MonitorConfig cfg = plan.config;
  cfg.seed += k;
  return cfg;
}

// Oracle mode reads the analytic pool-tilting ratio of the generated stream.
inline Monitor::RatioFn oracle_for(const MonitorConfig& cfg, const Scenario& sc, const SimulatedStream& s) {
  if (cfg.estimator.mode != EstimatorMode::oracle) return {};
  return oracle_ratio(sc, s.pool);
}

// `per_seed` (optional) sees each generated stream and run; it may be called
// from worker threads, one seed at a time per worker.
inline std::vector<RunSummary> run_seeds(
    const SeedPlan& plan,
    const std::function<void(std::size_t, const SimulatedStream&, const RunSummary&)>& per_seed = {}) {
  plan.scenario.validate();
  plan.config.validate();
  std::vector<RunSummary> out(plan.seeds);
  parallel_for(plan.seeds, plan.threads, [&](std::size_t k) {
    const Scenario sc = scenario_for_seed(plan, k);
    const MonitorConfig cfg = config_for_seed(plan, k);
    const SimulatedStream s = generate_stream(sc);
    out[k] = run_stream(cfg, s.calibration, s.events, sc.changepoint, plan.trace_window, plan.keep_traces,
                        oracle_for(cfg, sc, s));
    if (per_seed) per_seed(k, s, out[k]);
  });
  return out;
}

}  // namespace watch
