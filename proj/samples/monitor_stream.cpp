// Minimal end-to-end use: generate a benign covariate-shift stream, feed it to
// a monitor, and print the wealth paths every 250 events.

#include <cstdio>

#include "watch/watch.hpp"

int main() {
  watch::Scenario sc = watch::preset("fig1a");
  sc.seed = 7;
  const auto stream = watch::generate_stream(sc);

  watch::MonitorConfig cfg;
  cfg.baseline_ctm = true;
  watch::Monitor monitor(cfg, stream.calibration);

  for (const auto& ev : stream.events) {
    const auto o = monitor.observe(ev);
    if (o.t % 250 == 0) {
      std::printf("t=%5lld  wealth_x=%10.3g  wealth_w=%8.3g  ctm=%10.3g  width=%.3f\n",
                  static_cast<long long>(o.t), o.wealth_x, o.wealth_w, o.baseline->wealth, o.interval.width());
    }
    if (o.verdict) {
      std::printf("t=%5lld  verdict: %s\n", static_cast<long long>(o.t),
                  std::string(watch::to_string(o.verdict->kind)).c_str());
    }
  }
  if (monitor.adaptation_time()) std::printf("adapted at t=%lld\n", static_cast<long long>(*monitor.adaptation_time()));
}
