#pragma once

// Synthetic shift scenarios. Features are Gaussian around a configurable
// centre; labels follow a smooth function of a one-dimensional index
// v = beta . z (z the standardized features) with noise growing in v, so a
// shift toward small v is benign and one toward large v is harmful.
// Covariate shifts resample a finite holdout pool with probability
// proportional to exp(lambda h(x)); concept shifts add delta g(x) to labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "watch/conformal.hpp"
#include "watch/error.hpp"
#include "watch/monitor.hpp"

namespace watch {

enum class ScenarioKind { none, benign_covariate, extreme_covariate, concept_shift };

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::none: return "none";
    case ScenarioKind::benign_covariate: return "benign-covariate";
    case ScenarioKind::extreme_covariate: return "extreme-covariate";
    case ScenarioKind::concept_shift: return "concept";
  }
  return "?";
}

inline ScenarioKind scenario_kind_from_string(std::string_view s) {
  if (s == "none") return ScenarioKind::none;
  if (s == "benign-covariate") return ScenarioKind::benign_covariate;
  if (s == "extreme-covariate") return ScenarioKind::extreme_covariate;
  if (s == "concept") return ScenarioKind::concept_shift;
  throw config_error("unknown scenario kind '" + std::string(s) + "'");
}

// A named scalar function of the index v, used both as tilt h and concept map g.
struct IndexFunction {
  enum class Shape { zero, linear, sigmoid, offset_tanh, constant };
  Shape shape = Shape::zero;
  double scale = 1.0;   // linear slope, sigmoid steepness, constant value
  double center = 0.0;  // sigmoid midpoint / tanh offset

  [[nodiscard]] double operator()(double v) const {
    switch (shape) {
      case Shape::zero: return 0.0;
      case Shape::linear: return scale * v;
      case Shape::sigmoid: return 1.0 / (1.0 + std::exp(-scale * (v - center)));
      case Shape::offset_tanh: return center - std::tanh(scale * v);
      case Shape::constant: return scale;
    }
    return 0.0;
  }
};

inline std::string_view to_string(IndexFunction::Shape s) {
  switch (s) {
    case IndexFunction::Shape::zero: return "zero";
    case IndexFunction::Shape::linear: return "linear";
    case IndexFunction::Shape::sigmoid: return "sigmoid";
    case IndexFunction::Shape::offset_tanh: return "offset_tanh";
    case IndexFunction::Shape::constant: return "constant";
  }
  return "?";
}

inline IndexFunction::Shape index_shape_from_string(std::string_view s) {
  if (s == "zero") return IndexFunction::Shape::zero;
  if (s == "linear") return IndexFunction::Shape::linear;
  if (s == "sigmoid") return IndexFunction::Shape::sigmoid;
  if (s == "offset_tanh") return IndexFunction::Shape::offset_tanh;
  if (s == "constant") return IndexFunction::Shape::constant;
  throw config_error("unknown index function '" + std::string(s) + "'");
}

struct SourceModel {
  std::vector<double> feature_mean{50.0};
  std::vector<double> feature_scale{15.0};
  std::vector<double> beta{1.0};  // index direction on standardized features
  double intercept = 1.0;
  double slope = 0.5;       // prediction f(x) = intercept + slope * v
  // Label noise sd: noise_base * exp(noise_growth * v) + tail_gain * max(0, v - tail_start)^2.
  double noise_base = 0.5;
  double noise_growth = 0.12;
  double tail_start = 2.0;
  double tail_gain = 1.0;

  [[nodiscard]] std::size_t dim() const { return feature_mean.size(); }

  [[nodiscard]] double index(std::span<const double> x) const {
    double v = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) v += beta[j] * (x[j] - feature_mean[j]) / feature_scale[j];
    return v;
  }

  // The deployed model: the exact source regression function.
  [[nodiscard]] double predict(std::span<const double> x) const { return intercept + slope * index(x); }

  [[nodiscard]] double noise_sd(std::span<const double> x) const {
    const double v = index(x);
    const double over = std::max(0.0, v - tail_start);
    return noise_base * std::exp(noise_growth * v) + tail_gain * over * over;
  }

  void validate() const {
    const std::size_t d = dim();
    if (d == 0 || feature_scale.size() != d || beta.size() != d) throw config_error("source model dimension mismatch");
    for (double s : feature_scale) {
      if (!(s > 0.0)) throw config_error("feature scales must be > 0");
    }
    if (!(noise_base > 0.0)) throw config_error("noise base must be > 0");
    if (!(tail_gain >= 0.0)) throw config_error("tail gain must be >= 0");
  }
};

struct Scenario {
  std::string name = "none";
  ScenarioKind kind = ScenarioKind::none;
  std::int64_t changepoint = 500;  // events t > changepoint are shifted
  std::int64_t horizon = 3000;
  std::size_t n_calibration = 5000;
  std::size_t pool_size = 50000;
  double tilt_lambda = 0.0;
  IndexFunction tilt{};           // h
  double concept_delta = 0.0;
  IndexFunction concept_map{};    // g
  SourceModel source{};
  std::uint64_t seed = 0;

  [[nodiscard]] double h(std::span<const double> x) const { return tilt(source.index(x)); }
  [[nodiscard]] double g(std::span<const double> x) const { return concept_map(source.index(x)); }

  void validate() const {
    source.validate();
    if (changepoint < 1) throw config_error("changepoint must be >= 1");
    if (horizon < 1) throw config_error("horizon must be >= 1");
    if (n_calibration < 1) throw config_error("calibration size must be >= 1");
    if (pool_size < 1) throw config_error("pool size must be >= 1");
    if (!(tilt_lambda >= 0.0) || !std::isfinite(tilt_lambda)) throw config_error("tilt lambda must be finite and >= 0");
    if (!std::isfinite(concept_delta)) throw config_error("concept delta must be finite");
  }
};

struct Example {
  feature_vector x;
  double label = 0.0;
};

inline std::vector<Example> sample_source(const Scenario& sc, std::size_t n, std::mt19937_64& rng) {
  if (n == 0) throw config_error("sample size must be >= 1");
  sc.source.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Example> out;
  out.reserve(n);
  const std::size_t d = sc.source.dim();
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.x.resize(d);
    for (std::size_t j = 0; j < d; ++j) e.x[j] = sc.source.feature_mean[j] + sc.source.feature_scale[j] * normal(rng);
    e.label = sc.source.predict(e.x) + sc.source.noise_sd(e.x) * normal(rng);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Example> sample_source(const Scenario& sc, std::size_t n) {
  std::mt19937_64 rng(sc.seed);
  return sample_source(sc, n, rng);
}

// Normalized draw probabilities, proportional to exp(lambda h(x_i)).
template <typename H>
std::vector<double> tilt_probabilities(const std::vector<Example>& pool, H&& h, double lambda) {
  if (pool.empty()) throw invalid_input("tilted sampling needs a nonempty pool");
  if (!std::isfinite(lambda)) throw invalid_input("tilt lambda must be finite");
  std::vector<double> logit(pool.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    logit[i] = lambda * h(std::span<const double>(pool[i].x));
    hi = std::max(hi, logit[i]);
  }
  compensated_sum total;
  for (double& l : logit) {
    l = std::exp(l - hi);
    total.add(l);
  }
  for (double& l : logit) l /= total.value();
  return logit;
}

// Reusable sampler for repeated tilted draws from one pool.
class TiltedSampler {
 public:
  template <typename H>
  TiltedSampler(const std::vector<Example>& pool, H&& h, double lambda)
      : probs_(tilt_probabilities(pool, std::forward<H>(h), lambda)), dist_(probs_.begin(), probs_.end()) {}

  std::size_t operator()(std::mt19937_64& rng) { return dist_(rng); }
  [[nodiscard]] const std::vector<double>& probabilities() const { return probs_; }

 private:
  std::vector<double> probs_;
  std::discrete_distribution<std::size_t> dist_;
};

template <typename H>
const Example& tilted_sample(const std::vector<Example>& pool, H&& h, double lambda, std::mt19937_64& rng) {
  TiltedSampler s(pool, std::forward<H>(h), lambda);
  return pool[s(rng)];
}

inline double apply_concept_shift(std::span<const double> x, double y, const Scenario& sc) {
  if (sc.kind != ScenarioKind::concept_shift) throw invalid_input("concept map applies to concept scenarios only");
  return y + sc.concept_delta * sc.g(x);
}

// x -> exp(lambda h(x)) / mean_pool exp(lambda h): the exact ratio of the tilted
// resampling law to uniform resampling of the same pool.
inline std::function<double(std::span<const double>)> oracle_ratio(const Scenario& sc,
                                                                    const std::vector<Example>& pool) {
  if (sc.kind != ScenarioKind::benign_covariate && sc.kind != ScenarioKind::extreme_covariate) {
    throw invalid_input("oracle ratio is defined for covariate-shift scenarios only");
  }
  if (pool.empty()) throw invalid_input("oracle ratio needs the resampling pool");
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& e : pool) hi = std::max(hi, sc.tilt_lambda * sc.h(e.x));
  compensated_sum s;
  for (const auto& e : pool) s.add(std::exp(sc.tilt_lambda * sc.h(e.x) - hi));
  const double log_norm = hi + std::log(s.value() / static_cast<double>(pool.size()));
  return [sc, log_norm](std::span<const double> x) { return std::exp(sc.tilt_lambda * sc.h(x) - log_norm); };
}

struct SimulatedStream {
  std::vector<LabeledPoint> calibration;
  std::vector<StreamEvent> events;
  std::vector<Example> pool;
};

// Calibration and pre-change events are fresh source draws; post-change
// events resample the pool (covariate kinds) or apply the concept map.
inline SimulatedStream generate_stream(const Scenario& sc) {
  sc.validate();
  std::mt19937_64 rng(sc.seed);
  SimulatedStream s;
  for (auto& e : sample_source(sc, sc.n_calibration, rng)) {
    const double pred = sc.source.predict(e.x);
    s.calibration.push_back({std::move(e.x), pred, e.label});
  }
  const bool covariate = sc.kind == ScenarioKind::benign_covariate || sc.kind == ScenarioKind::extreme_covariate;
  std::optional<TiltedSampler> sampler;
  if (covariate) {
    s.pool = sample_source(sc, sc.pool_size, rng);
    sampler.emplace(s.pool, [&](std::span<const double> x) { return sc.h(x); }, sc.tilt_lambda);
  }
  s.events.reserve(static_cast<std::size_t>(sc.horizon));
  for (std::int64_t t = 1; t <= sc.horizon; ++t) {
    Example e;
    if (t > sc.changepoint && covariate) {
      e = s.pool[(*sampler)(rng)];
    } else {
      e = std::move(sample_source(sc, 1, rng).front());
      if (t > sc.changepoint && sc.kind == ScenarioKind::concept_shift) e.label = apply_concept_shift(e.x, e.label, sc);
    }
    const double pred = sc.source.predict(e.x);
    s.events.push_back({t, std::move(e.x), pred, e.label});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace presets {

inline Scenario base(std::string name, ScenarioKind kind) {
  Scenario s;
  s.name = std::move(name);
  s.kind = kind;
  return s;
}

// Shift toward small v, where label noise is low.
inline Scenario fig1a() {
  Scenario s = base("fig1a", ScenarioKind::benign_covariate);
  s.tilt = {IndexFunction::Shape::linear, -1.0, 0.0};
  s.tilt_lambda = 1.5;
  return s;
}

// Shift into v > 2.5, which holds under 1% of the source mass.
inline Scenario fig1b() {
  Scenario s = base("fig1b", ScenarioKind::extreme_covariate);
  s.tilt = {IndexFunction::Shape::sigmoid, 8.0, 2.5};
  s.tilt_lambda = 10.0;
  return s;
}

inline Scenario fig1c() {
  Scenario s = base("fig1c", ScenarioKind::concept_shift);
  s.concept_map = {IndexFunction::Shape::offset_tanh, 1.0, 1.5};
  s.concept_delta = 1.0;
  return s;
}

// Synthetic stand-ins for three tabular regression settings. The lambda
// values are fixed; tilt directions are illustrative.
inline Scenario meps() {
  Scenario s = base("meps", ScenarioKind::benign_covariate);
  s.source.feature_mean = {45.0, 12.0};
  s.source.feature_scale = {18.0, 3.0};
  s.source.beta = {0.8, -0.6};
  s.tilt = {IndexFunction::Shape::linear, -0.2, 0.0};
  s.tilt_lambda = 5.0;
  return s;
}

inline Scenario superconductivity() {
  Scenario s = base("superconductivity", ScenarioKind::benign_covariate);
  s.source.feature_mean = {0.0, 0.0, 0.0};
  s.source.feature_scale = {1.0, 1.0, 1.0};
  s.source.beta = {0.6, 0.6, 0.52915026221291811};  // unit-norm first principal direction
  s.tilt = {IndexFunction::Shape::linear, -0.2, 0.0};
  s.tilt_lambda = 2.5;
  return s;
}

inline Scenario bike() {
  Scenario s = base("bike", ScenarioKind::benign_covariate);
  s.source.feature_mean = {15.0, 0.6};
  s.source.feature_scale = {8.0, 0.2};
  s.source.beta = {-0.7071067811865476, 0.7071067811865476};
  s.tilt = {IndexFunction::Shape::linear, -0.2, 0.0};
  s.tilt_lambda = 5.0;
  return s;
}

}  // namespace presets

inline std::vector<std::string> preset_names() {
  return {"none", "fig1a", "fig1b", "fig1c", "meps", "superconductivity", "bike"};
}

inline Scenario preset(std::string_view name) {
  if (name == "none") return presets::base("none", ScenarioKind::none);
  if (name == "fig1a") return presets::fig1a();
  if (name == "fig1b") return presets::fig1b();
  if (name == "fig1c") return presets::fig1c();
  if (name == "meps") return presets::meps();
  if (name == "superconductivity") return presets::superconductivity();
  if (name == "bike") return presets::bike();
  throw config_error("unknown scenario preset '" + std::string(name) + "'");
}

}  // namespace watch
