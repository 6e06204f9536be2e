#pragma once

// Per-stream monitor. A nearest-neighbour X-CTM watches the inputs; the main
// WCTM watches residual scores, starting as a standard online CTM and switching
// to density-ratio weights over a frozen calibration set once the X-CTM's
// wealth reaches c_adapt. Ville, Shiryaev-Roberts and CUSUM alarms run on the
// WCTM wealth, and the pair of martingales drives a root-cause verdict.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "watch/betting.hpp"
#include "watch/changepoint.hpp"
#include "watch/conformal.hpp"
#include "watch/density_ratio.hpp"
#include "watch/error.hpp"
#include "watch/numeric.hpp"

namespace watch {

struct LabeledPoint {
  feature_vector x;
  double prediction = 0.0;
  double label = 0.0;
};

struct StreamEvent {
  std::int64_t index = 0;
  feature_vector x;
  double prediction = 0.0;
  double label = 0.0;
};

enum class VerdictKind { no_shift, benign_adapted, extreme_covariate_shift, concept_shift };

inline std::string_view to_string(VerdictKind k) {
  switch (k) {
    case VerdictKind::no_shift: return "no-shift";
    case VerdictKind::benign_adapted: return "benign-adapted";
    case VerdictKind::extreme_covariate_shift: return "extreme-covariate-shift";
    case VerdictKind::concept_shift: return "concept-shift";
  }
  return "?";
}

inline VerdictKind verdict_from_string(std::string_view s) {
  if (s == "no-shift") return VerdictKind::no_shift;
  if (s == "benign-adapted") return VerdictKind::benign_adapted;
  if (s == "extreme-covariate-shift") return VerdictKind::extreme_covariate_shift;
  if (s == "concept-shift") return VerdictKind::concept_shift;
  throw invalid_input("unknown verdict '" + std::string(s) + "'");
}

struct Verdict {
  VerdictKind kind = VerdictKind::no_shift;
  double wealth_x = 1.0;
  double peak_wealth_x = 1.0;  // running maximum, the quantity root_cause compares to c_adapt
  double wealth_w = 1.0;
  std::int64_t t = 0;
};

// Both martingales alarmed: the inputs moved too far to reweight. Only the
// WCTM alarmed: Y | X changed.
inline VerdictKind root_cause(double wealth_x, bool wctm_alarmed, double c_adapt, bool adapted) {
  if (wctm_alarmed) {
    return wealth_x >= c_adapt ? VerdictKind::extreme_covariate_shift : VerdictKind::concept_shift;
  }
  return adapted ? VerdictKind::benign_adapted : VerdictKind::no_shift;
}

enum class PostAlarmPolicy { log_only, reset, halt };

inline std::string_view to_string(PostAlarmPolicy p) {
  switch (p) {
    case PostAlarmPolicy::log_only: return "log_only";
    case PostAlarmPolicy::reset: return "reset";
    case PostAlarmPolicy::halt: return "halt";
  }
  return "?";
}

inline PostAlarmPolicy post_alarm_from_string(std::string_view s) {
  if (s == "log_only") return PostAlarmPolicy::log_only;
  if (s == "reset") return PostAlarmPolicy::reset;
  if (s == "halt") return PostAlarmPolicy::halt;
  throw config_error("unknown post-alarm policy '" + std::string(s) + "'");
}

struct MonitorConfig {
  double alpha = 0.1;
  double c_alarm = 100.0;
  double c_adapt = 10.0;
  double c_sr = 0.0;     // 0 means "same as c_alarm"
  double c_cusum = 0.0;  // 0 means "same as c_alarm"
  std::vector<double> jump_grid{kDefaultJumpGrid.begin(), kDefaultJumpGrid.end()};
  RatioEstimatorConfig estimator{};
  std::size_t buffer_size = 256;
  std::uint64_t seed = 0;
  bool adapt = true;
  bool conservative_p = false;
  bool baseline_ctm = false;
  PostAlarmPolicy post_alarm = PostAlarmPolicy::log_only;

  [[nodiscard]] double sr_threshold() const { return c_sr > 0.0 ? c_sr : c_alarm; }
  [[nodiscard]] double cusum_threshold() const { return c_cusum > 0.0 ? c_cusum : c_alarm; }

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("alpha must lie in (0, 1)");
    check_threshold(c_alarm);
    check_threshold(c_adapt);
    check_threshold(sr_threshold());
    check_threshold(cusum_threshold());
    if (jump_grid.empty()) throw config_error("jump grid must be nonempty");
    for (double j : jump_grid) {
      if (!(j > 0.0 && j <= 1.0)) throw config_error("jump rates must lie in (0, 1]");
    }
    if (buffer_size == 0) throw config_error("replay buffer size must be > 0");
    estimator.validate();
  }
};

struct BaselineOutcome {
  PValue p;
  double wealth = 1.0;
  double log_wealth = 0.0;
  PredictionInterval interval;
  bool covered = true;
  bool alarm = false;  // true only on the step of the first Ville crossing
};

struct StepOutcome {
  std::int64_t t = 0;
  PValue p_x;
  PValue p_z;
  double score_x = 0.0;
  double score_z = 0.0;
  double wealth_x = 1.0;
  double wealth_w = 1.0;
  double log_wealth_x = 0.0;
  double log_wealth_w = 0.0;
  double sr_statistic = 0.0;
  double cusum_statistic = 0.0;
  double test_weight = 0.0;
  PredictionInterval interval;
  bool covered = true;
  bool adapted = false;
  std::vector<AlarmRecord> alarms;
  std::optional<Verdict> verdict;
  std::optional<BaselineOutcome> baseline;
};

namespace detail {

// Count-based p-value over an ascending score list; bit-identical to standard_p_value.
inline PValue sorted_p_value(const std::vector<double>& sorted, double v, double u) {
  const auto lo = std::lower_bound(sorted.begin(), sorted.end(), v);
  const auto hi = std::upper_bound(lo, sorted.end(), v);
  const double gt = static_cast<double>(sorted.end() - hi);
  const double eq = static_cast<double>(hi - lo) + 1.0;
  const double total = static_cast<double>(sorted.size()) + 1.0;
  return {(gt + u * eq) / total, u, false};
}

// Unit-mass case of weighted_quantile over an ascending score list.
inline ScoreQuantile sorted_uniform_quantile(const std::vector<double>& sorted, double alpha) {
  const double budget = alpha * (static_cast<double>(sorted.size()) + 1.0);
  if (budget < 1.0) return ScoreQuantile::infinite();
  const auto k = static_cast<std::size_t>(std::floor(budget)) - 1;  // scores allowed strictly above q
  return ScoreQuantile::finite(sorted[sorted.size() - 1 - k]);
}

inline void sorted_insert(std::vector<double>& sorted, double v) {
  sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), v), v);
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

inline std::string hex_bits(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

inline double from_hex_bits(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw restore_error("malformed double encoding");
  }
  return std::bit_cast<double>(static_cast<std::uint64_t>(std::stoull(s, nullptr, 16)));
}

inline nlohmann::json encode(std::span<const double> v) {
  auto out = nlohmann::json::array();
  for (double x : v) out.push_back(hex_bits(x));
  return out;
}

inline std::vector<double> decode(const nlohmann::json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(from_hex_bits(e.get<std::string>()));
  return out;
}

inline nlohmann::json encode_rows(const std::vector<feature_vector>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back(encode(r));
  return out;
}

inline std::vector<feature_vector> decode_rows(const nlohmann::json& j) {
  std::vector<feature_vector> out;
  out.reserve(j.size());
  for (const auto& r : j) out.push_back(decode(r));
  return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Engine>
std::string engine_state(const Engine& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

template <typename Engine>
Engine engine_from_state(const std::string& s) {
  Engine e;
  std::istringstream is(s);
  is >> e;
  if (is.fail()) throw restore_error("malformed RNG state");
  return e;
}

inline nlohmann::json encode_jumper(const CompositeJumper& cj) {
  auto out = nlohmann::json::array();
  for (const auto& c : cj.components()) {
    out.push_back({{"J", hex_bits(c.jump_rate())},
                   {"frac", encode(c.fractions())},
                   {"mantissa", hex_bits(c.mantissa())},
                   {"exponent", c.exponent()}});
  }
  return out;
}

inline CompositeJumper decode_jumper(const nlohmann::json& j) {
  std::vector<SimpleJumper> comps;
  for (const auto& c : j) {
    const auto f = decode(c.at("frac"));
    if (f.size() != 3) throw restore_error("jumper fractions must have 3 entries");
    comps.push_back(SimpleJumper::from_parts(from_hex_bits(c.at("J")), {f[0], f[1], f[2]},
                                             from_hex_bits(c.at("mantissa")), c.at("exponent").get<std::int64_t>()));
  }
  return CompositeJumper(std::move(comps));
}

}  // namespace detail

inline constexpr std::string_view kSnapshotFormat = "watch-snapshot/1";

class Monitor {
 public:
  using RatioFn = RatioEstimator::RatioFn;

  Monitor(MonitorConfig cfg, const std::vector<LabeledPoint>& calibration, RatioFn oracle = {})
      : cfg_(std::move(cfg)), oracle_(std::move(oracle)) {
    cfg_.validate();
    if (cfg_.estimator.mode == EstimatorMode::oracle && !oracle_) {
      throw config_error("oracle estimator mode needs a ratio function");
    }
    if (calibration.empty()) throw invalid_input("initial calibration set is empty");
    std::vector<feature_vector> xs;
    xs.reserve(calibration.size());
    for (const auto& p : calibration) {
      if (!all_finite(p.x)) throw invalid_input("non-finite calibration feature");
      xs.push_back(p.x);
    }
    standardizer_ = FeatureStandardizer::fit(xs);
    for (const auto& p : calibration) {
      standardizer_.check_dim(p.x);
      cal_scores_.push_back(score_abs_residual(p.prediction, p.label).value());
      cal_features_.push_back(p.x);
      cal_z_.push_back(standardizer_.apply(p.x));
    }
    const std::size_t n = cal_z_.size();
    cal_nn_.assign(n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = detail::squared_distance(cal_z_[i], cal_z_[j]);
        cal_nn_[i] = std::min(cal_nn_[i], d);
        cal_nn_[j] = std::min(cal_nn_[j], d);
      }
    }
    sorted_scores_ = cal_scores_;
    std::sort(sorted_scores_.begin(), sorted_scores_.end());
    if (cfg_.baseline_ctm) baseline_sorted_ = sorted_scores_;
    rng_.seed(cfg_.seed);
    train_rng_.seed(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    xctm_ = CompositeJumper(std::span<const double>(cfg_.jump_grid));
    wctm_ = xctm_;
    baseline_ = xctm_;
  }

  [[nodiscard]] const MonitorConfig& config() const { return cfg_; }
  [[nodiscard]] std::int64_t time() const { return t_; }
  [[nodiscard]] bool adapted() const { return t_ad_.has_value(); }
  [[nodiscard]] std::optional<std::int64_t> adaptation_time() const { return t_ad_; }
  [[nodiscard]] bool halted() const { return halted_; }
  [[nodiscard]] std::size_t calibration_size() const { return cal_scores_.size(); }
  [[nodiscard]] std::span<const double> calibration_scores() const { return cal_scores_; }
  [[nodiscard]] const std::vector<feature_vector>& calibration_features() const { return cal_features_; }
  [[nodiscard]] const FeatureStandardizer& standardizer() const { return standardizer_; }
  [[nodiscard]] const CompositeJumper& wctm() const { return wctm_; }
  [[nodiscard]] const CompositeJumper& xctm() const { return xctm_; }
  [[nodiscard]] const SRState& sr_state() const { return sr_; }
  [[nodiscard]] const CUSUMState& cusum_state() const { return cusum_; }
  [[nodiscard]] const std::optional<RatioEstimator>& estimator() const { return estimator_; }

  StepOutcome observe(const StreamEvent& ev) {
    if (halted_) throw invalid_state("monitor halted after an alarm");
    if (ev.index != t_ + 1) {
      throw sequencing_error("expected event index " + std::to_string(t_ + 1) + ", got " + std::to_string(ev.index));
    }
    standardizer_.check_dim(ev.x);
    if (!all_finite(ev.x)) throw invalid_input("non-finite feature value");
    const double score = score_abs_residual(ev.prediction, ev.label).value();

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u_x = unif(rng_);
    double u_z = unif(rng_);
    if (cfg_.conservative_p) u_x = u_z = 1.0;

    StepOutcome out;
    out.t = ev.index;
    out.score_z = score;

    // X-CTM over the current bag; bag scores are updated as if x_t had joined.
    const feature_vector z = standardizer_.apply(ev.x);
    const std::size_t n = cal_z_.size();
    d2_.resize(n);
    bag_.resize(n);
    double s2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      d2_[i] = detail::squared_distance(z, cal_z_[i]);
      s2 = std::min(s2, d2_[i]);
      bag_[i] = std::min(cal_nn_[i], d2_[i]);
    }
    out.p_x = standard_p_value(bag_, s2, u_x);
    out.score_x = std::sqrt(s2);
    xctm_.step(out.p_x.value);
    out.wealth_x = xctm_.wealth();
    out.log_wealth_x = xctm_.log_wealth();
    xctm_peak_ = std::max(xctm_peak_, out.wealth_x);

    const bool adapting_now = cfg_.adapt && !t_ad_ && out.wealth_x >= cfg_.c_adapt;
    if (adapting_now) begin_adaptation(ev.index);

    // WCTM p-value and interval from one weight vector.
    if (!t_ad_) {
      out.p_z = detail::sorted_p_value(sorted_scores_, score, u_z);
      out.interval = prediction_interval(ev.prediction, detail::sorted_uniform_quantile(sorted_scores_, cfg_.alpha));
      out.test_weight = 1.0 / (static_cast<double>(sorted_scores_.size()) + 1.0);
    } else {
      masses_.resize(n + 1);
      for (std::size_t i = 0; i < n; ++i) masses_[i] = estimator_->predict(cal_features_[i]);
      masses_[n] = estimator_->predict(ev.x);
      const WeightVector w = weights_from_ratios(masses_);
      out.p_z = penalized_weighted_p_value(cal_scores_, score, w, cfg_.alpha, u_z);
      out.interval = prediction_interval(ev.prediction, weighted_quantile(cal_scores_, frozen_order_, w, cfg_.alpha));
      out.test_weight = w.test_weight();
    }
    out.covered = out.interval.contains(ev.label);
    out.adapted = t_ad_.has_value();

    wctm_.step(out.p_z.value);
    out.wealth_w = wctm_.wealth();
    out.log_wealth_w = wctm_.log_wealth();

    bool ville_fired = false;
    if (!ville_latched_ && out.wealth_w >= cfg_.c_alarm) {
      ville_latched_ = ville_fired = true;
      out.alarms.push_back({Procedure::ville, ev.index, out.wealth_w, cfg_.c_alarm});
    }
    const SRStep sr = sr_update(sr_, ev.index, std::max(out.wealth_w, std::numeric_limits<double>::min()),
                                cfg_.sr_threshold());
    sr_ = sr.state;
    out.sr_statistic = sr.statistic;
    if (sr.alarm) out.alarms.push_back({Procedure::sr, ev.index, sr.statistic, cfg_.sr_threshold()});
    const CUSUMStep cu = cusum_update(cusum_, ev.index, std::max(out.wealth_w, std::numeric_limits<double>::min()),
                                      cfg_.cusum_threshold());
    cusum_ = cu.state;
    out.cusum_statistic = cu.statistic;
    if (cu.alarm) out.alarms.push_back({Procedure::cusum, ev.index, cu.statistic, cfg_.cusum_threshold()});

    if (cfg_.baseline_ctm) out.baseline = baseline_step(ev, score, u_z);

    if (!t_ad_) {
      for (std::size_t i = 0; i < n; ++i) cal_nn_[i] = std::min(cal_nn_[i], d2_[i]);
      cal_nn_.push_back(s2);
      cal_scores_.push_back(score);
      cal_features_.push_back(ev.x);
      cal_z_.push_back(z);
      detail::sorted_insert(sorted_scores_, score);
    } else {
      update_estimator(ev.x);
    }

    if (ville_fired || adapting_now) {
      // The X-CTM counts as having detected a shift once it has ever crossed c_adapt.
      out.verdict = Verdict{root_cause(xctm_peak_, ville_latched_, cfg_.c_adapt, t_ad_.has_value()), out.wealth_x,
                            xctm_peak_, out.wealth_w, ev.index};
    }
    if (ville_fired) {
      if (cfg_.post_alarm == PostAlarmPolicy::reset) {
        wctm_.reset();
        sr_ = SRState{};
        cusum_ = CUSUMState{};
        ville_latched_ = false;
      } else if (cfg_.post_alarm == PostAlarmPolicy::halt) {
        halted_ = true;
      }
    }
    t_ = ev.index;
    return out;
  }

  // Versioned, checksummed JSON. Oracle ratio functions are not serialized;
  // pass the same function to restore().
  [[nodiscard]] std::string snapshot() const {
    using nlohmann::json;
    using detail::encode;
    using detail::hex_bits;
    json cfg = {{"alpha", hex_bits(cfg_.alpha)},
                {"c_alarm", hex_bits(cfg_.c_alarm)},
                {"c_adapt", hex_bits(cfg_.c_adapt)},
                {"c_sr", hex_bits(cfg_.c_sr)},
                {"c_cusum", hex_bits(cfg_.c_cusum)},
                {"jump_grid", encode(cfg_.jump_grid)},
                {"estimator_mode", std::string(to_string(cfg_.estimator.mode))},
                {"learning_rate", hex_bits(cfg_.estimator.learning_rate)},
                {"hidden_width", cfg_.estimator.hidden_width},
                {"w_min", hex_bits(cfg_.estimator.w_min)},
                {"w_max", hex_bits(cfg_.estimator.w_max)},
                {"estimator_seed", cfg_.estimator.seed},
                {"buffer_size", cfg_.buffer_size},
                {"seed", cfg_.seed},
                {"adapt", cfg_.adapt},
                {"conservative_p", cfg_.conservative_p},
                {"baseline_ctm", cfg_.baseline_ctm},
                {"post_alarm", std::string(to_string(cfg_.post_alarm))}};
    json s = {{"config", cfg},
              {"standardizer", {{"mean", encode(standardizer_.mean())}, {"scale", encode(standardizer_.scale())}}},
              {"cal_scores", encode(cal_scores_)},
              {"cal_features", detail::encode_rows(cal_features_)},
              {"cal_nn", encode(cal_nn_)},
              {"sorted_scores", encode(sorted_scores_)},
              {"baseline_sorted", encode(baseline_sorted_)},
              {"t", t_},
              {"t_ad", t_ad_ ? json(*t_ad_) : json(nullptr)},
              {"ville_latched", ville_latched_},
              {"xctm_peak", hex_bits(xctm_peak_)},
              {"baseline_latched", baseline_latched_},
              {"halted", halted_},
              {"rng", detail::engine_state(rng_)},
              {"train_rng", detail::engine_state(train_rng_)},
              {"xctm", detail::encode_jumper(xctm_)},
              {"wctm", detail::encode_jumper(wctm_)},
              {"baseline", detail::encode_jumper(baseline_)},
              {"sr",
               {{"sum", hex_bits(sr_.reciprocal_sum.raw_sum())},
                {"comp", hex_bits(sr_.reciprocal_sum.compensation())},
                {"stage_start", sr_.stage_start},
                {"stage", sr_.stage}}},
              {"cusum", {{"min", hex_bits(cusum_.min_wealth)}, {"stage_start", cusum_.stage_start}}}};
    if (estimator_) {
      const auto& e = *estimator_;
      s["estimator"] = {{"mean", encode(e.standardizer().mean())},
                        {"scale", encode(e.standardizer().scale())},
                        {"out_w", encode(e.output_weights())},
                        {"out_b", hex_bits(e.output_bias())},
                        {"hid_w", encode(e.hidden_weights())},
                        {"hid_b", encode(e.hidden_biases())},
                        {"steps", e.step_count()},
                        {"n_source", e.n_source()},
                        {"n_target", e.n_target()}};
    } else {
      s["estimator"] = nullptr;
    }
    auto rows = [](const auto& buf) {
      auto a = json::array();
      for (const auto& ex : buf) a.push_back(detail::encode(ex.x));
      return a;
    };
    s["source_buffer"] = rows(source_buf_);
    s["target_buffer"] = rows(target_buf_);
    const std::string payload = s.dump();
    json env = {{"format", kSnapshotFormat}, {"checksum", hex_u64(detail::fnv1a(payload))}, {"payload", payload}};
    return env.dump();
  }

  static Monitor restore(std::string_view blob, RatioFn oracle = {}) {
    using nlohmann::json;
    try {
      const json env = json::parse(blob);
      if (env.at("format").get<std::string>() != kSnapshotFormat) {
        throw restore_error("unsupported snapshot format '" + env.at("format").get<std::string>() + "'");
      }
      const std::string payload = env.at("payload").get<std::string>();
      if (env.at("checksum").get<std::string>() != hex_u64(detail::fnv1a(payload))) {
        throw restore_error("snapshot checksum mismatch");
      }
      return from_payload(json::parse(payload), std::move(oracle));
    } catch (const restore_error&) {
      throw;
    } catch (const std::exception& e) {
      throw restore_error(std::string("corrupt snapshot: ") + e.what());
    }
  }

 private:
  Monitor() = default;

  static std::string hex_u64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

  void begin_adaptation(std::int64_t t) {
    t_ad_ = t;
    frozen_order_ = descending_order(cal_scores_);
    if (cfg_.estimator.mode == EstimatorMode::oracle) {
      estimator_ = RatioEstimator::oracle(oracle_, standardizer_.dim(), cfg_.estimator.w_min, cfg_.estimator.w_max);
    } else {
      RatioEstimatorConfig ec = cfg_.estimator;
      ec.seed = cfg_.seed ^ 0xbf58476d1ce4e5b9ULL;
      estimator_.emplace(ec, FeatureStandardizer::fit(cal_features_));
    }
    // Source replay examples: a seeded sample of the frozen calibration inputs.
    std::vector<std::size_t> idx(cal_features_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<std::size_t> pick;
    std::sample(idx.begin(), idx.end(), std::back_inserter(pick), cfg_.buffer_size, train_rng_);
    source_buf_.clear();
    for (std::size_t i : pick) source_buf_.push_back({cal_features_[i], Domain::source});
  }

  void update_estimator(const feature_vector& x) {
    target_buf_.push_back({x, Domain::target});
    if (target_buf_.size() > cfg_.buffer_size) target_buf_.pop_front();
    estimator_->set_class_counts(source_buf_.size(), target_buf_.size());
    if (cfg_.estimator.mode == EstimatorMode::oracle) return;
    epoch_.clear();
    for (const auto& ex : source_buf_) epoch_.push_back(&ex);
    for (const auto& ex : target_buf_) epoch_.push_back(&ex);
    std::shuffle(epoch_.begin(), epoch_.end(), train_rng_);
    estimator_->fit_update(std::span<const DomainExample* const>(epoch_));
  }

  BaselineOutcome baseline_step(const StreamEvent& ev, double score, double u) {
    BaselineOutcome b;
    b.p = detail::sorted_p_value(baseline_sorted_, score, u);
    b.interval = prediction_interval(ev.prediction, detail::sorted_uniform_quantile(baseline_sorted_, cfg_.alpha));
    b.covered = b.interval.contains(ev.label);
    baseline_.step(b.p.value);
    b.wealth = baseline_.wealth();
    b.log_wealth = baseline_.log_wealth();
    if (!baseline_latched_ && b.wealth >= cfg_.c_alarm) baseline_latched_ = b.alarm = true;
    detail::sorted_insert(baseline_sorted_, score);
    return b;
  }

  static Monitor from_payload(const nlohmann::json& s, RatioFn oracle) {
    using detail::decode;
    using detail::from_hex_bits;
    Monitor m;
    const auto& c = s.at("config");
    m.cfg_.alpha = from_hex_bits(c.at("alpha"));
    m.cfg_.c_alarm = from_hex_bits(c.at("c_alarm"));
    m.cfg_.c_adapt = from_hex_bits(c.at("c_adapt"));
    m.cfg_.c_sr = from_hex_bits(c.at("c_sr"));
    m.cfg_.c_cusum = from_hex_bits(c.at("c_cusum"));
    m.cfg_.jump_grid = decode(c.at("jump_grid"));
    m.cfg_.estimator.mode = estimator_mode_from_string(c.at("estimator_mode").get<std::string>());
    m.cfg_.estimator.learning_rate = from_hex_bits(c.at("learning_rate"));
    m.cfg_.estimator.hidden_width = c.at("hidden_width").get<std::size_t>();
    m.cfg_.estimator.w_min = from_hex_bits(c.at("w_min"));
    m.cfg_.estimator.w_max = from_hex_bits(c.at("w_max"));
    m.cfg_.estimator.seed = c.at("estimator_seed").get<std::uint64_t>();
    m.cfg_.buffer_size = c.at("buffer_size").get<std::size_t>();
    m.cfg_.seed = c.at("seed").get<std::uint64_t>();
    m.cfg_.adapt = c.at("adapt").get<bool>();
    m.cfg_.conservative_p = c.at("conservative_p").get<bool>();
    m.cfg_.baseline_ctm = c.at("baseline_ctm").get<bool>();
    m.cfg_.post_alarm = post_alarm_from_string(c.at("post_alarm").get<std::string>());
    try {
      m.cfg_.validate();
    } catch (const config_error& e) {
      throw restore_error(std::string("snapshot config invalid: ") + e.what());
    }
    m.oracle_ = std::move(oracle);
    if (m.cfg_.estimator.mode == EstimatorMode::oracle && !m.oracle_) {
      throw restore_error("snapshot uses an oracle ratio; supply it to restore()");
    }

    m.standardizer_ = FeatureStandardizer(decode(s.at("standardizer").at("mean")),
                                          decode(s.at("standardizer").at("scale")));
    m.cal_scores_ = decode(s.at("cal_scores"));
    m.cal_features_ = detail::decode_rows(s.at("cal_features"));
    m.cal_nn_ = decode(s.at("cal_nn"));
    m.sorted_scores_ = decode(s.at("sorted_scores"));
    m.baseline_sorted_ = decode(s.at("baseline_sorted"));
    const std::size_t n = m.cal_scores_.size();
    if (n == 0 || m.cal_features_.size() != n || m.cal_nn_.size() != n || m.sorted_scores_.size() != n) {
      throw restore_error("calibration arrays disagree in length");
    }
    for (const auto& x : m.cal_features_) {
      if (x.size() != m.standardizer_.dim()) throw restore_error("calibration feature dimension mismatch");
      m.cal_z_.push_back(m.standardizer_.apply(x));
    }
    m.t_ = s.at("t").get<std::int64_t>();
    if (!s.at("t_ad").is_null()) {
      m.t_ad_ = s.at("t_ad").get<std::int64_t>();
      m.frozen_order_ = descending_order(m.cal_scores_);
    }
    m.ville_latched_ = s.at("ville_latched").get<bool>();
    m.xctm_peak_ = from_hex_bits(s.at("xctm_peak"));
    m.baseline_latched_ = s.at("baseline_latched").get<bool>();
    m.halted_ = s.at("halted").get<bool>();
    m.rng_ = detail::engine_from_state<std::mt19937_64>(s.at("rng").get<std::string>());
    m.train_rng_ = detail::engine_from_state<std::mt19937_64>(s.at("train_rng").get<std::string>());
    m.xctm_ = detail::decode_jumper(s.at("xctm"));
    m.wctm_ = detail::decode_jumper(s.at("wctm"));
    m.baseline_ = detail::decode_jumper(s.at("baseline"));
    const auto& sr = s.at("sr");
    m.sr_.reciprocal_sum = compensated_sum::from_parts(from_hex_bits(sr.at("sum")), from_hex_bits(sr.at("comp")));
    m.sr_.stage_start = sr.at("stage_start").get<std::int64_t>();
    m.sr_.stage = sr.at("stage").get<std::int64_t>();
    m.cusum_.min_wealth = from_hex_bits(s.at("cusum").at("min"));
    m.cusum_.stage_start = s.at("cusum").at("stage_start").get<std::int64_t>();

    const auto& e = s.at("estimator");
    if (!e.is_null()) {
      if (!m.t_ad_) throw restore_error("estimator present before adaptation");
      if (m.cfg_.estimator.mode == EstimatorMode::oracle) {
        m.estimator_ = RatioEstimator::oracle(m.oracle_, m.standardizer_.dim(), m.cfg_.estimator.w_min,
                                              m.cfg_.estimator.w_max);
      } else {
        RatioEstimatorConfig ec = m.cfg_.estimator;
        ec.seed = m.cfg_.seed ^ 0xbf58476d1ce4e5b9ULL;
        m.estimator_.emplace(ec, FeatureStandardizer(decode(e.at("mean")), decode(e.at("scale"))));
        m.estimator_->set_parameters(decode(e.at("out_w")), from_hex_bits(e.at("out_b")), decode(e.at("hid_w")),
                                     decode(e.at("hid_b")), e.at("steps").get<std::uint64_t>());
      }
      m.estimator_->set_class_counts(e.at("n_source").get<std::size_t>(), e.at("n_target").get<std::size_t>());
    } else if (m.t_ad_) {
      throw restore_error("adapted snapshot lacks an estimator");
    }
    for (const auto& r : s.at("source_buffer")) m.source_buf_.push_back({decode(r), Domain::source});
    for (const auto& r : s.at("target_buffer")) m.target_buf_.push_back({decode(r), Domain::target});
    return m;
  }

  MonitorConfig cfg_;
  RatioFn oracle_;
  FeatureStandardizer standardizer_;

  // Calibration in arrival order; frozen once t_ad is set.
  std::vector<double> cal_scores_;
  std::vector<feature_vector> cal_features_;
  std::vector<feature_vector> cal_z_;
  std::vector<double> cal_nn_;  // squared nearest-neighbour distance within the bag
  std::vector<double> sorted_scores_;
  std::vector<std::size_t> frozen_order_;
  std::vector<double> baseline_sorted_;

  CompositeJumper xctm_;
  CompositeJumper wctm_;
  CompositeJumper baseline_;
  SRState sr_;
  CUSUMState cusum_;

  std::int64_t t_ = 0;
  std::optional<std::int64_t> t_ad_;
  bool ville_latched_ = false;
  double xctm_peak_ = 1.0;
  bool baseline_latched_ = false;
  bool halted_ = false;
  std::mt19937_64 rng_;
  std::mt19937_64 train_rng_;

  std::optional<RatioEstimator> estimator_;
  std::vector<DomainExample> source_buf_;
  std::deque<DomainExample> target_buf_;

  // Scratch buffers, not part of the logical state.
  std::vector<double> d2_;
  std::vector<double> bag_;
  std::vector<double> masses_;
  std::vector<const DomainExample*> epoch_;
};

// Holds feature arrivals until their labels show up, releasing the labelled
// prefix in feature-arrival order.
class DelayedLabelBuffer {
 public:
  void add_features(std::int64_t index, feature_vector x, double prediction) {
    if (index <= released_ || pending_.count(index)) throw sequencing_error("duplicate event index");
    pending_[index] = Slot{std::move(x), prediction, std::nullopt};
  }

  void add_label(std::int64_t index, double label) {
    auto it = pending_.find(index);
    if (it == pending_.end()) throw sequencing_error("label for unknown event " + std::to_string(index));
    it->second.label = label;
  }

  std::vector<StreamEvent> drain() {
    std::vector<StreamEvent> out;
    while (!pending_.empty()) {
      auto it = pending_.begin();
      if (it->first != released_ + 1 || !it->second.label) break;
      out.push_back({it->first, std::move(it->second.x), it->second.prediction, *it->second.label});
      released_ = it->first;
      pending_.erase(it);
    }
    return out;
  }

  [[nodiscard]] std::size_t pending() const { return pending_.size(); }

 private:
  struct Slot {
    feature_vector x;
    double prediction = 0.0;
    std::optional<double> label;
  };
  std::map<std::int64_t, Slot> pending_;
  std::int64_t released_ = 0;
};

}  // namespace watch
