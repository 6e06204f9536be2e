#pragma once

// Evaluation metrics: detection delay bucketing, rolling coverage / width
// traces, and seed-level aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "watch/monitor.hpp"
#include "watch/numeric.hpp"

namespace watch {

struct AddResult {
  double add = std::numeric_limits<double>::quiet_NaN();  // NaN when nothing was detected
  std::size_t detected = 0;
  std::size_t unnecessary = 0;
  std::size_t missed = 0;
};

// Alarms at or after the changepoint are delays; earlier ones are unnecessary;
// absent ones are missed.
inline AddResult compute_add(std::span<const std::optional<std::int64_t>> alarm_times, std::int64_t changepoint) {
  if (changepoint < 1) throw invalid_input("changepoint must be >= 1");
  AddResult r;
  std::vector<double> delays;
  for (const auto& a : alarm_times) {
    if (!a) {
      ++r.missed;
    } else if (*a < changepoint) {
      ++r.unnecessary;
    } else {
      delays.push_back(static_cast<double>(*a - changepoint));
    }
  }
  r.detected = delays.size();
  if (!delays.empty()) r.add = accurate_sum(delays) / static_cast<double>(delays.size());
  return r;
}

enum class ShiftClass { none, benign, harmful };

inline std::string_view to_string(ShiftClass s) {
  switch (s) {
    case ShiftClass::none: return "none";
    case ShiftClass::benign: return "benign";
    case ShiftClass::harmful: return "harmful";
  }
  return "?";
}

inline ShiftClass shift_class_from_string(std::string_view s) {
  if (s == "none") return ShiftClass::none;
  if (s == "benign") return ShiftClass::benign;
  if (s == "harmful") return ShiftClass::harmful;
  throw config_error("unknown shift class '" + std::string(s) + "'");
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);  // infinite widths propagate
}

struct RunSummary {
  std::size_t events = 0;
  std::optional<std::int64_t> alarm;           // first WCTM Ville alarm
  std::optional<VerdictKind> alarm_verdict;    // verdict issued with that alarm
  std::optional<std::int64_t> adaptation;      // t_ad
  std::optional<std::int64_t> baseline_alarm;  // first baseline Ville alarm
  double coverage_pre = std::numeric_limits<double>::quiet_NaN();
  double coverage_post = std::numeric_limits<double>::quiet_NaN();
  double median_width_pre = std::numeric_limits<double>::quiet_NaN();
  double median_width_post = std::numeric_limits<double>::quiet_NaN();
  std::size_t covered_post = 0;
  std::size_t n_post = 0;
  std::vector<double> widths_pre;
  std::vector<double> widths_post;
  std::vector<double> coverage_trace;
  std::vector<double> width_trace;
  std::vector<double> wealth_x_trace;
  std::vector<double> wealth_w_trace;
  std::vector<double> baseline_wealth_trace;
};

// Folds step outcomes into a RunSummary. Events with t > changepoint count as
// post-change; without a changepoint everything is "pre".
class RunRecorder {
 public:
  explicit RunRecorder(std::optional<std::int64_t> changepoint = std::nullopt, std::size_t window = 100,
                       bool keep_traces = true)
      : changepoint_(changepoint), window_(std::max<std::size_t>(window, 1)), traces_(keep_traces) {}

  void record(const StepOutcome& o) {
    RunSummary& s = summary_;
    ++s.events;
    for (const auto& a : o.alarms) {
      if (a.procedure == Procedure::ville && !s.alarm) {
        s.alarm = a.time;
        if (o.verdict) s.alarm_verdict = o.verdict->kind;
      }
    }
    if (o.adapted && !s.adaptation) s.adaptation = o.t;
    if (o.baseline && o.baseline->alarm && !s.baseline_alarm) s.baseline_alarm = o.t;

    const bool post = changepoint_ && o.t > *changepoint_;
    const double width = o.interval.width();
    if (post) {
      ++s.n_post;
      if (o.covered) ++s.covered_post;
      s.widths_post.push_back(width);
    } else {
      ++n_pre_;
      if (o.covered) ++covered_pre_;
      s.widths_pre.push_back(width);
    }
    if (!traces_) return;
    cov_win_.push_back(o.covered ? 1 : 0);
    cov_sum_ += o.covered ? 1 : 0;
    width_win_.push_back(width);
    if (cov_win_.size() > window_) {
      cov_sum_ -= cov_win_.front();
      cov_win_.pop_front();
      width_win_.pop_front();
    }
    s.coverage_trace.push_back(static_cast<double>(cov_sum_) / static_cast<double>(cov_win_.size()));
    s.width_trace.push_back(median_of({width_win_.begin(), width_win_.end()}));
    s.wealth_x_trace.push_back(o.wealth_x);
    s.wealth_w_trace.push_back(o.wealth_w);
    if (o.baseline) s.baseline_wealth_trace.push_back(o.baseline->wealth);
  }

  RunSummary finish() {
    RunSummary s = summary_;
    if (n_pre_ > 0) s.coverage_pre = static_cast<double>(covered_pre_) / static_cast<double>(n_pre_);
    if (s.n_post > 0) s.coverage_post = static_cast<double>(s.covered_post) / static_cast<double>(s.n_post);
    s.median_width_pre = median_of(s.widths_pre);
    s.median_width_post = median_of(s.widths_post);
    return s;
  }

 private:
  std::optional<std::int64_t> changepoint_;
  std::size_t window_;
  bool traces_;
  RunSummary summary_;
  std::size_t n_pre_ = 0;
  std::size_t covered_pre_ = 0;
  std::deque<int> cov_win_;
  std::deque<double> width_win_;
  long cov_sum_ = 0;
};

struct MeanSE {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

// Sorting first makes the result independent of seed order.
inline MeanSE mean_se(std::vector<double> v) {
  MeanSE r;
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  r.n = v.size();
  if (v.empty()) return r;
  std::sort(v.begin(), v.end());
  r.mean = accurate_sum(v) / static_cast<double>(v.size());
  if (v.size() > 1) {
    compensated_sum ss;
    for (double x : v) ss.add((x - r.mean) * (x - r.mean));
    r.se = std::sqrt(ss.value() / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

struct MonitorMetrics {
  std::size_t runs = 0;
  std::size_t alarmed = 0;
  double alarm_rate = 0.0;
  AddResult add;
  MeanSE delay;  // per-run delays over detected runs
  std::size_t unnecessary_alarms = 0;
  std::size_t missed_alarms = 0;
};

struct MetricsReport {
  ShiftClass shift = ShiftClass::none;
  std::optional<std::int64_t> changepoint;
  MonitorMetrics wctm;
  std::optional<MonitorMetrics> baseline;
  std::map<std::string, std::size_t> verdicts;  // verdict at the first alarm, alarmed runs only
  std::size_t adapted_runs = 0;
  MeanSE coverage_pre;
  MeanSE coverage_post;
  double pooled_coverage_post = std::numeric_limits<double>::quiet_NaN();
  double median_width_pre = std::numeric_limits<double>::quiet_NaN();
  double median_width_post = std::numeric_limits<double>::quiet_NaN();
};

inline MonitorMetrics monitor_metrics(const std::vector<std::optional<std::int64_t>>& alarms, ShiftClass shift,
                                      std::optional<std::int64_t> changepoint) {
  MonitorMetrics m;
  m.runs = alarms.size();
  for (const auto& a : alarms) m.alarmed += a.has_value();
  m.alarm_rate = m.runs ? static_cast<double>(m.alarmed) / static_cast<double>(m.runs) : 0.0;
  if (shift == ShiftClass::harmful && changepoint) {
    m.add = compute_add(alarms, *changepoint);
    std::vector<double> d;
    for (const auto& a : alarms) {
      if (a && *a >= *changepoint) d.push_back(static_cast<double>(*a - *changepoint));
    }
    m.delay = mean_se(std::move(d));
    m.unnecessary_alarms = m.add.unnecessary;
    m.missed_alarms = m.add.missed;
  } else {
    // Without a harmful shift every alarm is unnecessary and none can be missed.
    m.unnecessary_alarms = m.alarmed;
  }
  return m;
}

inline MetricsReport aggregate(const std::vector<RunSummary>& runs, ShiftClass shift,
                               std::optional<std::int64_t> changepoint, bool with_baseline) {
  MetricsReport r;
  r.shift = shift;
  r.changepoint = changepoint;
  std::vector<std::optional<std::int64_t>> wa, ba;
  std::vector<double> cov_pre, cov_post, w_pre, w_post;
  std::size_t covered = 0, n_post = 0;
  for (const auto& s : runs) {
    wa.push_back(s.alarm);
    ba.push_back(s.baseline_alarm);
    if (s.alarm) ++r.verdicts[std::string(to_string(s.alarm_verdict.value_or(VerdictKind::no_shift)))];
    if (s.adaptation) ++r.adapted_runs;
    cov_pre.push_back(s.coverage_pre);
    cov_post.push_back(s.coverage_post);
    covered += s.covered_post;
    n_post += s.n_post;
    w_pre.insert(w_pre.end(), s.widths_pre.begin(), s.widths_pre.end());
    w_post.insert(w_post.end(), s.widths_post.begin(), s.widths_post.end());
  }
  r.wctm = monitor_metrics(wa, shift, changepoint);
  if (with_baseline) r.baseline = monitor_metrics(ba, shift, changepoint);
  r.coverage_pre = mean_se(std::move(cov_pre));
  r.coverage_post = mean_se(std::move(cov_post));
  if (n_post > 0) r.pooled_coverage_post = static_cast<double>(covered) / static_cast<double>(n_post);
  r.median_width_pre = median_of(std::move(w_pre));
  r.median_width_post = median_of(std::move(w_post));
  return r;
}

}  // namespace watch
