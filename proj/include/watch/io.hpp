#pragma once

// Plumbing for the command-line front end: flat key=value configs, CSV and
// JSON-lines ingestion with per-row rejection, structured log records that
// mirror StepOutcome, and report / trace emission.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "watch/error.hpp"
#include "watch/metrics.hpp"
#include "watch/monitor.hpp"
#include "watch/simulator.hpp"

namespace watch::io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Scalars
// ---------------------------------------------------------------------------

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  MonitorConfig monitor;
  std::string calibration;  // path; empty when supplied elsewhere
  std::optional<std::int64_t> changepoint;
  ShiftClass shift = ShiftClass::none;
  std::size_t trace_window = 100;

  // Every key with its resolved value, sorted by key.
  [[nodiscard]] std::map<std::string, std::string> resolved() const {
    const auto& m = monitor;
    std::string grid;
    for (std::size_t i = 0; i < m.jump_grid.size(); ++i) grid += (i ? "," : "") + format_double(m.jump_grid[i]);
    std::map<std::string, std::string> kv{
        {"alpha", format_double(m.alpha)},
        {"c_alarm", format_double(m.c_alarm)},
        {"c_adapt", format_double(m.c_adapt)},
        {"c_sr", format_double(m.sr_threshold())},
        {"c_cusum", format_double(m.cusum_threshold())},
        {"jump_grid", grid},
        {"estimator", std::string(to_string(m.estimator.mode))},
        {"learning_rate", format_double(m.estimator.learning_rate)},
        {"hidden_width", std::to_string(m.estimator.hidden_width)},
        {"w_min", format_double(m.estimator.w_min)},
        {"w_max", format_double(m.estimator.w_max)},
        {"buffer_size", std::to_string(m.buffer_size)},
        {"seed", std::to_string(m.seed)},
        {"adapt", m.adapt ? "true" : "false"},
        {"conservative_p", m.conservative_p ? "true" : "false"},
        {"baseline", m.baseline_ctm ? "ctm" : "none"},
        {"post_alarm", std::string(to_string(m.post_alarm))},
        {"calibration", calibration},
        {"changepoint", changepoint ? std::to_string(*changepoint) : ""},
        {"shift", std::string(to_string(shift))},
        {"trace_window", std::to_string(trace_window)},
    };
    return kv;
  }
};

namespace detail {

inline double need_double(const std::string& key, std::string_view v) {
  const auto d = parse_double(v);
  if (!d || !std::isfinite(*d)) throw config_error("config key '" + key + "' needs a finite number");
  return *d;
}

inline std::uint64_t need_uint(const std::string& key, std::string_view v) {
  v = trim(v);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw config_error("config key '" + key + "' needs a nonnegative integer");
  }
  return out;
}

inline bool need_bool(const std::string& key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error("config key '" + key + "' needs true/false");
}

}  // namespace detail

inline void apply_config_value(RunConfig& rc, const std::string& key, std::string_view value) {
  using namespace detail;
  auto& m = rc.monitor;
  const std::string v(trim(value));
  if (key == "alpha") m.alpha = need_double(key, v);
  else if (key == "c_alarm") m.c_alarm = need_double(key, v);
  else if (key == "c_adapt") m.c_adapt = need_double(key, v);
  else if (key == "c_sr") m.c_sr = need_double(key, v);
  else if (key == "c_cusum") m.c_cusum = need_double(key, v);
  else if (key == "jump_grid") {
    m.jump_grid.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) m.jump_grid.push_back(need_double(key, item));
  } else if (key == "estimator") m.estimator.mode = estimator_mode_from_string(v);
  else if (key == "learning_rate") m.estimator.learning_rate = need_double(key, v);
  else if (key == "hidden_width") m.estimator.hidden_width = need_uint(key, v);
  else if (key == "w_min") m.estimator.w_min = need_double(key, v);
  else if (key == "w_max") m.estimator.w_max = need_double(key, v);
  else if (key == "buffer_size") m.buffer_size = need_uint(key, v);
  else if (key == "seed") m.seed = need_uint(key, v);
  else if (key == "adapt") m.adapt = need_bool(key, v);
  else if (key == "conservative_p") m.conservative_p = need_bool(key, v);
  else if (key == "baseline") {
    if (v != "ctm" && v != "none") throw config_error("baseline must be 'ctm' or 'none'");
    m.baseline_ctm = v == "ctm";
  } else if (key == "post_alarm") m.post_alarm = post_alarm_from_string(v);
  else if (key == "calibration") rc.calibration = v;
  else if (key == "changepoint") {
    if (v.empty()) rc.changepoint.reset();
    else rc.changepoint = static_cast<std::int64_t>(need_uint(key, v));
  } else if (key == "shift") rc.shift = shift_class_from_string(v);
  else if (key == "trace_window") rc.trace_window = need_uint(key, v);
  else throw config_error("unknown config key '" + key + "'");
}

// Lines of `key = value`; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_kv(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw config_error("line " + std::to_string(lineno) + ": expected key = value");
    }
    out.emplace_back(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
  }
  return out;
}

inline RunConfig parse_run_config(std::istream& in, RunConfig base = {}) {
  for (const auto& [k, v] : parse_kv(in)) apply_config_value(base, k, v);
  base.monitor.validate();
  return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  return parse_run_config(in, std::move(base));
}

inline void write_resolved(std::ostream& os, const RunConfig& rc) {
  for (const auto& [k, v] : rc.resolved()) os << k << " = " << v << '\n';
}

// Scenario files use the same syntax; unspecified keys keep the preset's value.
inline Scenario parse_scenario(std::istream& in, Scenario sc = {}) {
  using namespace detail;
  auto vec = [](const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(need_double(key, item));
    return out;
  };
  for (const auto& [k, v] : parse_kv(in)) {
    if (k == "preset") sc = preset(v);
    else if (k == "name") sc.name = v;
    else if (k == "kind") sc.kind = scenario_kind_from_string(v);
    else if (k == "changepoint") sc.changepoint = static_cast<std::int64_t>(need_uint(k, v));
    else if (k == "horizon") sc.horizon = static_cast<std::int64_t>(need_uint(k, v));
    else if (k == "n_calibration") sc.n_calibration = need_uint(k, v);
    else if (k == "pool_size") sc.pool_size = need_uint(k, v);
    else if (k == "lambda") sc.tilt_lambda = need_double(k, v);
    else if (k == "tilt") sc.tilt.shape = index_shape_from_string(v);
    else if (k == "tilt_scale") sc.tilt.scale = need_double(k, v);
    else if (k == "tilt_center") sc.tilt.center = need_double(k, v);
    else if (k == "delta") sc.concept_delta = need_double(k, v);
    else if (k == "concept") sc.concept_map.shape = index_shape_from_string(v);
    else if (k == "concept_scale") sc.concept_map.scale = need_double(k, v);
    else if (k == "concept_center") sc.concept_map.center = need_double(k, v);
    else if (k == "feature_mean") sc.source.feature_mean = vec(k, v);
    else if (k == "feature_scale") sc.source.feature_scale = vec(k, v);
    else if (k == "beta") sc.source.beta = vec(k, v);
    else if (k == "intercept") sc.source.intercept = need_double(k, v);
    else if (k == "slope") sc.source.slope = need_double(k, v);
    else if (k == "noise_base") sc.source.noise_base = need_double(k, v);
    else if (k == "noise_growth") sc.source.noise_growth = need_double(k, v);
    else if (k == "tail_start") sc.source.tail_start = need_double(k, v);
    else if (k == "tail_gain") sc.source.tail_gain = need_double(k, v);
    else if (k == "seed") sc.seed = need_uint(k, v);
    else throw config_error("unknown scenario key '" + k + "'");
  }
  sc.validate();
  return sc;
}

// ---------------------------------------------------------------------------
// Event ingestion
// ---------------------------------------------------------------------------

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct ParsedEvents {
  std::vector<StreamEvent> events;
  std::vector<RowError> rejected;
  std::size_t dim = 0;
};

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Header: x_0..x_{d-1}, prediction, label, and optionally index (or t), in any order.
inline ParsedEvents parse_csv(std::istream& in) {
  ParsedEvents out;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) return out;
  ++lineno;
  const auto header = split_commas(line);
  std::map<std::size_t, std::size_t> feature_col;
  std::optional<std::size_t> pred_col, label_col, index_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto h = header[c];
    if (h == "prediction") pred_col = c;
    else if (h == "label") label_col = c;
    else if (h == "index" || h == "t") index_col = c;
    else if (h.size() > 2 && h.substr(0, 2) == "x_") {
      std::size_t j = 0;
      const auto [p, ec] = std::from_chars(h.data() + 2, h.data() + h.size(), j);
      if (ec != std::errc() || p != h.data() + h.size()) throw invalid_input("bad feature column '" + std::string(h) + "'");
      feature_col[j] = c;
    } else {
      throw invalid_input("unexpected CSV column '" + std::string(h) + "'");
    }
  }
  if (!pred_col || !label_col) throw invalid_input("CSV header needs 'prediction' and 'label' columns");
  out.dim = feature_col.size();
  for (std::size_t j = 0; j < out.dim; ++j) {
    if (!feature_col.count(j)) throw invalid_input("CSV header is missing x_" + std::to_string(j));
  }
  std::int64_t next = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      out.rejected.push_back({lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                          std::to_string(cells.size())});
      continue;
    }
    StreamEvent ev;
    ev.x.resize(out.dim);
    bool ok = true;
    std::string why;
    for (std::size_t j = 0; j < out.dim && ok; ++j) {
      const auto v = parse_double(cells[feature_col[j]]);
      if (!v || !std::isfinite(*v)) ok = false, why = "non-numeric x_" + std::to_string(j);
      else ev.x[j] = *v;
    }
    const auto p = parse_double(cells[*pred_col]);
    const auto y = parse_double(cells[*label_col]);
    if (ok && (!p || !std::isfinite(*p))) ok = false, why = "non-numeric prediction";
    if (ok && (!y || !std::isfinite(*y))) ok = false, why = "non-numeric label";
    if (ok && index_col) {
      const auto idx = parse_double(cells[*index_col]);
      if (!idx || *idx != std::floor(*idx) || *idx < 1) ok = false, why = "bad index";
      else ev.index = static_cast<std::int64_t>(*idx);
    }
    if (!ok) {
      out.rejected.push_back({lineno, why});
      continue;
    }
    ev.prediction = *p;
    ev.label = *y;
    if (!index_col) ev.index = next;
    ++next;
    out.events.push_back(std::move(ev));
  }
  return out;
}

// Each line: {"x": [...], "prediction": p, "label": y} with optional "t"/"index".
// Event-log records have this shape, so logs can be replayed directly.
inline ParsedEvents parse_jsonl(std::istream& in) {
  ParsedEvents out;
  std::string line;
  std::size_t lineno = 0;
  std::int64_t next = 1;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      StreamEvent ev;
      for (const auto& v : j.at("x")) ev.x.push_back(v.get<double>());
      ev.prediction = j.at("prediction").get<double>();
      ev.label = j.at("label").get<double>();
      if (!all_finite(ev.x) || !std::isfinite(ev.prediction) || !std::isfinite(ev.label)) {
        throw invalid_input("non-finite value");
      }
      if (have_dim && ev.x.size() != out.dim) throw invalid_input("feature dimension changed");
      if (j.contains("t")) ev.index = j.at("t").get<std::int64_t>();
      else if (j.contains("index")) ev.index = j.at("index").get<std::int64_t>();
      else ev.index = next;
      if (!have_dim) out.dim = ev.x.size(), have_dim = true;
      ++next;
      out.events.push_back(std::move(ev));
    } catch (const std::exception& e) {
      out.rejected.push_back({lineno, e.what()});
    }
  }
  return out;
}

inline bool has_suffix(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline ParsedEvents load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open input " + path);
  if (has_suffix(path, ".csv")) return parse_csv(in);
  return parse_jsonl(in);
}

inline constexpr std::string_view kCalibrationFormat = "watch-calibration/1";

// Calibration comes as CSV / JSON lines rows, or the JSON written by `calibrate`.
inline std::vector<LabeledPoint> load_calibration(const std::string& path) {
  std::vector<LabeledPoint> out;
  if (has_suffix(path, ".json")) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open calibration " + path);
    json j;
    try {
      in >> j;
      if (j.at("format").get<std::string>() != kCalibrationFormat) throw invalid_input("unknown calibration format");
      for (const auto& p : j.at("points")) {
        out.push_back({p.at("x").get<std::vector<double>>(), p.at("prediction").get<double>(),
                       p.at("label").get<double>()});
      }
    } catch (const json::exception& e) {
      throw invalid_input(std::string("malformed calibration file: ") + e.what());
    }
    return out;
  }
  auto parsed = load_events(path);
  if (!parsed.rejected.empty()) {
    throw invalid_input("calibration " + path + " line " + std::to_string(parsed.rejected.front().line) + ": " +
                        parsed.rejected.front().message);
  }
  for (auto& e : parsed.events) out.push_back({std::move(e.x), e.prediction, e.label});
  return out;
}

inline json calibration_json(const std::vector<LabeledPoint>& pts) {
  std::vector<feature_vector> xs;
  for (const auto& p : pts) xs.push_back(p.x);
  const auto st = FeatureStandardizer::fit(xs);
  json points = json::array();
  json scores = json::array();
  for (const auto& p : pts) {
    points.push_back({{"x", p.x}, {"prediction", p.prediction}, {"label", p.label}});
    scores.push_back(score_abs_residual(p.prediction, p.label).value());
  }
  return {{"format", kCalibrationFormat},
          {"standardizer", {{"mean", st.mean()}, {"scale", st.scale()}}},
          {"scores", scores},
          {"points", points}};
}

// ---------------------------------------------------------------------------
// Log records
// ---------------------------------------------------------------------------

inline json to_json(const PValue& p) { return {{"value", p.value}, {"u", p.randomizer_u}, {"penalized", p.penalized}}; }

inline json to_json(const PredictionInterval& iv) {
  return {{"lower", iv.informative ? json(iv.lower) : json(nullptr)},
          {"upper", iv.informative ? json(iv.upper) : json(nullptr)},
          {"informative", iv.informative}};
}

// Non-finite doubles are written as null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json log_record(const StreamEvent& ev, const StepOutcome& o) {
  json alarms = json::array();
  for (const auto& a : o.alarms) {
    alarms.push_back({{"procedure", std::string(to_string(a.procedure))},
                      {"time", a.time},
                      {"statistic", num(a.statistic)},
                      {"threshold", a.threshold}});
  }
  json rec = {{"t", o.t},
              {"x", ev.x},
              {"prediction", ev.prediction},
              {"label", ev.label},
              {"p_x", to_json(o.p_x)},
              {"p_z", to_json(o.p_z)},
              {"score_x", o.score_x},
              {"score_z", o.score_z},
              {"wealth_x", num(o.wealth_x)},
              {"wealth_w", num(o.wealth_w)},
              {"log_wealth_x", o.log_wealth_x},
              {"log_wealth_w", o.log_wealth_w},
              {"sr_statistic", num(o.sr_statistic)},
              {"cusum_statistic", num(o.cusum_statistic)},
              {"test_weight", o.test_weight},
              {"interval", to_json(o.interval)},
              {"covered", o.covered},
              {"adapted", o.adapted},
              {"alarms", alarms},
              {"verdict", nullptr}};
  if (o.verdict) {
    rec["verdict"] = {{"kind", std::string(to_string(o.verdict->kind))},
                      {"wealth_x", num(o.verdict->wealth_x)},
                      {"peak_wealth_x", num(o.verdict->peak_wealth_x)},
                      {"wealth_w", num(o.verdict->wealth_w)},
                      {"t", o.verdict->t}};
  }
  if (o.baseline) {
    rec["baseline"] = {{"p", to_json(o.baseline->p)},
                       {"wealth", num(o.baseline->wealth)},
                       {"log_wealth", o.baseline->log_wealth},
                       {"interval", to_json(o.baseline->interval)},
                       {"covered", o.baseline->covered},
                       {"alarm", o.baseline->alarm}};
  }
  return rec;
}

namespace detail {

inline double num_or_inf(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

inline PValue pvalue_from(const json& j) {
  return {j.at("value").get<double>(), j.at("u").get<double>(), j.at("penalized").get<bool>()};
}

inline PredictionInterval interval_from(const json& j) {
  PredictionInterval iv;
  iv.informative = j.at("informative").get<bool>();
  if (iv.informative) {
    iv.lower = j.at("lower").get<double>();
    iv.upper = j.at("upper").get<double>();
  }
  return iv;
}

}  // namespace detail

// Inverse of log_record, for recomputing metrics from logs.
inline StepOutcome outcome_from_record(const json& j) {
  using detail::num_or_inf;
  StepOutcome o;
  o.t = j.at("t").get<std::int64_t>();
  o.p_x = detail::pvalue_from(j.at("p_x"));
  o.p_z = detail::pvalue_from(j.at("p_z"));
  o.score_x = j.at("score_x").get<double>();
  o.score_z = j.at("score_z").get<double>();
  o.wealth_x = num_or_inf(j.at("wealth_x"));
  o.wealth_w = num_or_inf(j.at("wealth_w"));
  o.log_wealth_x = j.at("log_wealth_x").get<double>();
  o.log_wealth_w = j.at("log_wealth_w").get<double>();
  o.sr_statistic = num_or_inf(j.at("sr_statistic"));
  o.cusum_statistic = num_or_inf(j.at("cusum_statistic"));
  o.test_weight = j.at("test_weight").get<double>();
  o.interval = detail::interval_from(j.at("interval"));
  o.covered = j.at("covered").get<bool>();
  o.adapted = j.at("adapted").get<bool>();
  for (const auto& a : j.at("alarms")) {
    o.alarms.push_back({procedure_from_string(a.at("procedure").get<std::string>()), a.at("time").get<std::int64_t>(),
                        num_or_inf(a.at("statistic")), a.at("threshold").get<double>()});
  }
  if (const auto& v = j.at("verdict"); !v.is_null()) {
    o.verdict = Verdict{verdict_from_string(v.at("kind").get<std::string>()), num_or_inf(v.at("wealth_x")),
                        num_or_inf(v.at("peak_wealth_x")), num_or_inf(v.at("wealth_w")), v.at("t").get<std::int64_t>()};
  }
  if (j.contains("baseline")) {
    const auto& b = j.at("baseline");
    BaselineOutcome bo;
    bo.p = detail::pvalue_from(b.at("p"));
    bo.wealth = num_or_inf(b.at("wealth"));
    bo.log_wealth = b.at("log_wealth").get<double>();
    bo.interval = detail::interval_from(b.at("interval"));
    bo.covered = b.at("covered").get<bool>();
    bo.alarm = b.at("alarm").get<bool>();
    o.baseline = bo;
  }
  return o;
}

// ---------------------------------------------------------------------------
// Reports and traces
// ---------------------------------------------------------------------------

inline json to_json(const MeanSE& m) { return {{"mean", num(m.mean)}, {"se", num(m.se)}, {"n", m.n}}; }

inline json to_json(const MonitorMetrics& m) {
  return {{"runs", m.runs},
          {"alarmed", m.alarmed},
          {"alarm_rate", m.alarm_rate},
          {"add", num(m.add.add)},
          {"add_se", num(m.delay.se)},
          {"detected", m.add.detected},
          {"unnecessary_alarms", m.unnecessary_alarms},
          {"missed_alarms", m.missed_alarms}};
}

inline json to_json(const MetricsReport& r) {
  json j = {{"shift", std::string(to_string(r.shift))},
            {"changepoint", r.changepoint ? json(*r.changepoint) : json(nullptr)},
            {"wctm", to_json(r.wctm)},
            {"verdicts", r.verdicts},
            {"adapted_runs", r.adapted_runs},
            {"coverage_pre", to_json(r.coverage_pre)},
            {"coverage_post", to_json(r.coverage_post)},
            {"pooled_coverage_post", num(r.pooled_coverage_post)},
            {"median_width_pre", num(r.median_width_pre)},
            {"median_width_post", num(r.median_width_post)}};
  j["baseline"] = r.baseline ? to_json(*r.baseline) : json(nullptr);
  return j;
}

inline json to_json(const RunSummary& s) {
  auto opt = [](const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); };
  return {{"events", s.events},
          {"alarm", opt(s.alarm)},
          {"alarm_verdict", s.alarm_verdict ? json(std::string(to_string(*s.alarm_verdict))) : json(nullptr)},
          {"adaptation", opt(s.adaptation)},
          {"baseline_alarm", opt(s.baseline_alarm)},
          {"coverage_pre", num(s.coverage_pre)},
          {"coverage_post", num(s.coverage_post)},
          {"median_width_pre", num(s.median_width_pre)},
          {"median_width_post", num(s.median_width_post)}};
}

inline json config_json(const RunConfig& rc) {
  json j = json::object();
  for (const auto& [k, v] : rc.resolved()) j[k] = v;
  return j;
}

// Long format: run,t,series,value.
inline void write_trace_header(std::ostream& os) { os << "run,t,series,value\n"; }

inline void write_trace(std::ostream& os, const std::string& run, const RunSummary& s) {
  auto emit = [&](const char* series, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      os << run << ',' << (i + 1) << ',' << series << ',';
      if (std::isfinite(v[i])) os << format_double(v[i]);
      else os << (v[i] > 0 ? "inf" : "nan");
      os << '\n';
    }
  };
  emit("coverage", s.coverage_trace);
  emit("width", s.width_trace);
  emit("wealth_x", s.wealth_x_trace);
  emit("wealth_w", s.wealth_w_trace);
  emit("baseline_wealth", s.baseline_wealth_trace);
}

}  // namespace watch::io
