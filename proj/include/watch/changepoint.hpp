#pragma once

// Alarm policies over a wealth process M_t (M_0 = 1): Ville thresholding,
// the multistage Shiryaev-Roberts procedure and CUSUM. All three keep only
// scalar accumulators, so each update is O(1).

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "watch/error.hpp"
#include "watch/numeric.hpp"

namespace watch {

enum class Procedure { ville, sr, cusum };

inline std::string_view to_string(Procedure p) {
  switch (p) {
    case Procedure::ville: return "ville";
    case Procedure::sr: return "sr";
    case Procedure::cusum: return "cusum";
  }
  return "?";
}

inline Procedure procedure_from_string(std::string_view s) {
  if (s == "ville") return Procedure::ville;
  if (s == "sr") return Procedure::sr;
  if (s == "cusum") return Procedure::cusum;
  throw invalid_input("unknown alarm procedure '" + std::string(s) + "'");
}

struct AlarmRecord {
  Procedure procedure = Procedure::ville;
  std::int64_t time = 0;
  double statistic = 0.0;
  double threshold = 0.0;

  friend bool operator==(const AlarmRecord&, const AlarmRecord&) = default;
};

inline void check_threshold(double c) {
  if (!(c > 1.0) || !std::isfinite(c)) throw config_error("alarm threshold must be finite and > 1");
}

inline void check_wealth(double m) {
  if (!(m > 0.0)) throw numeric_error("wealth must be positive, got " + std::to_string(m));
}

inline bool ville_alarm(double wealth, double c) {
  check_threshold(c);
  return wealth >= c;
}

// Shiryaev-Roberts: S_t = M_t * sum_{i = stage_start}^{t-1} 1 / M_i.
struct SRState {
  compensated_sum reciprocal_sum{1.0};  // M_0 = 1 has already joined
  std::int64_t stage_start = 0;
  std::int64_t stage = 1;

  [[nodiscard]] double reciprocal() const { return reciprocal_sum.value(); }
};

struct SRStep {
  SRState state;
  bool alarm = false;
  double statistic = 0.0;
};

inline SRStep sr_update(const SRState& state, std::int64_t t, double wealth, double c) {
  check_threshold(c);
  check_wealth(wealth);
  SRStep out{state, false, 0.0};
  const double r = state.reciprocal();
  out.statistic = r > 0.0 ? wealth * r : 0.0;
  if (out.statistic >= c) {
    out.alarm = true;
    out.state.reciprocal_sum.reset();
    out.state.stage_start = t;
    out.state.stage += 1;
  }
  // M_t joins the sum only after S_t has been evaluated.
  out.state.reciprocal_sum.add(1.0 / wealth);
  return out;
}

// CUSUM: M_t / min_{i in stage, i < t} M_i.
struct CUSUMState {
  double min_wealth = 1.0;
  std::int64_t stage_start = 0;
};

struct CUSUMStep {
  CUSUMState state;
  bool alarm = false;
  double statistic = 0.0;
};

inline CUSUMStep cusum_update(const CUSUMState& state, std::int64_t t, double wealth, double c) {
  check_threshold(c);
  check_wealth(wealth);
  CUSUMStep out{state, false, wealth / state.min_wealth};
  if (out.statistic >= c) {
    out.alarm = true;
    out.state.min_wealth = wealth;
    out.state.stage_start = t;
    return out;
  }
  if (wealth < out.state.min_wealth) out.state.min_wealth = wealth;
  return out;
}

}  // namespace watch
