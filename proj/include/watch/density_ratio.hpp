#pragma once

// Density-ratio estimation through a probabilistic source-vs-target classifier:
//   w(x) = P(target | x) / P(source | x) * n_source / n_target,
// clipped to [w_min, w_max]. Features are z-scored with a standardizer that is
// fixed when the estimator is created.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "watch/conformal.hpp"
#include "watch/error.hpp"

namespace watch {

// Sink for non-fatal diagnostics; defaults to std::clog.
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view msg) {
    std::clog << "watch: warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view msg) {
  if (warning_sink()) warning_sink()(msg);
}

enum class EstimatorMode { logistic, mlp, oracle };

inline std::string_view to_string(EstimatorMode m) {
  switch (m) {
    case EstimatorMode::logistic: return "logistic";
    case EstimatorMode::mlp: return "mlp";
    case EstimatorMode::oracle: return "oracle";
  }
  return "?";
}

inline EstimatorMode estimator_mode_from_string(std::string_view s) {
  if (s == "logistic") return EstimatorMode::logistic;
  if (s == "mlp") return EstimatorMode::mlp;
  if (s == "oracle") return EstimatorMode::oracle;
  throw config_error("unknown estimator mode '" + std::string(s) + "'");
}

struct RatioEstimatorConfig {
  EstimatorMode mode = EstimatorMode::logistic;
  double learning_rate = 0.01;
  std::size_t hidden_width = 32;
  double w_min = 0.05;
  double w_max = 20.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw config_error("learning rate must be > 0");
    if (!(w_min >= 0.0) || !(w_max > w_min) || !std::isfinite(w_max)) {
      throw config_error("clip bounds need 0 <= w_min < w_max < inf");
    }
    if (mode == EstimatorMode::mlp && hidden_width == 0) throw config_error("MLP hidden width must be > 0");
  }
};

enum class Domain : int { source = 0, target = 1 };

struct DomainExample {
  feature_vector x;
  Domain domain = Domain::source;
};

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// clip(p / (1 - p) * prior_factor, w_min, w_max), evaluated on the logit.
inline double ratio_from_logit(double logit, double prior_factor, double w_min, double w_max) {
  const double log_ratio = logit + std::log(prior_factor);
  if (log_ratio >= std::log(w_max)) return w_max;
  const double r = std::exp(log_ratio);
  return std::clamp(r, w_min, w_max);
}

inline double ratio_from_probability(double p_target, double prior_factor, double w_min, double w_max) {
  if (!(p_target >= 0.0 && p_target <= 1.0)) throw invalid_input("probability outside [0, 1]");
  if (p_target >= 1.0) return w_max;
  if (p_target <= 0.0) return w_min;
  return std::clamp(p_target / (1.0 - p_target) * prior_factor, w_min, w_max);
}

class RatioEstimator {
 public:
  using RatioFn = std::function<double(std::span<const double>)>;

  RatioEstimator(RatioEstimatorConfig cfg, FeatureStandardizer standardizer)
      : cfg_(cfg), standardizer_(std::move(standardizer)) {
    cfg_.validate();
    if (cfg_.mode == EstimatorMode::oracle) throw config_error("oracle mode needs a ratio function");
    const std::size_t d = standardizer_.dim();
    if (cfg_.mode == EstimatorMode::logistic) {
      weights_.assign(d, 0.0);
    } else {
      const std::size_t h = cfg_.hidden_width;
      std::mt19937_64 rng(cfg_.seed);
      const double a = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(d, 1)));
      std::uniform_real_distribution<double> init(-a, a);
      hidden_w_.resize(h * d);
      for (double& w : hidden_w_) w = init(rng);
      hidden_b_.assign(h, 0.0);
      weights_.assign(h, 0.0);  // zero output layer: the fresh estimator predicts even odds
    }
  }

  static RatioEstimator oracle(RatioFn ratio, std::size_t dim, double w_min = 0.0, double w_max = 1e12) {
    RatioEstimatorConfig cfg;
    cfg.mode = EstimatorMode::oracle;
    cfg.w_min = w_min;
    cfg.w_max = w_max;
    cfg.validate();
    RatioEstimator est(cfg, FeatureStandardizer::identity(dim), std::move(ratio));
    return est;
  }

  [[nodiscard]] const RatioEstimatorConfig& config() const { return cfg_; }
  [[nodiscard]] const FeatureStandardizer& standardizer() const { return standardizer_; }
  [[nodiscard]] std::size_t dim() const { return standardizer_.dim(); }
  [[nodiscard]] std::uint64_t step_count() const { return steps_; }

  // Class-prior correction n_source / n_target; 1 until both counts are positive.
  void set_class_counts(std::size_t n_source, std::size_t n_target) {
    n_source_ = n_source;
    n_target_ = n_target;
  }
  [[nodiscard]] double prior_factor() const {
    if (n_source_ == 0 || n_target_ == 0) return 1.0;
    return static_cast<double>(n_source_) / static_cast<double>(n_target_);
  }
  [[nodiscard]] std::size_t n_source() const { return n_source_; }
  [[nodiscard]] std::size_t n_target() const { return n_target_; }

  // One pass of per-example SGD on the logistic loss, in the given order.
  void fit_update(std::span<const DomainExample> examples) {
    if (cfg_.mode == EstimatorMode::oracle) return;
    for (const auto& ex : examples) standardizer_.check_dim(ex.x);
    for (const auto& ex : examples) sgd_step(ex.x, ex.domain == Domain::target ? 1.0 : 0.0);
  }

  void fit_update(std::span<const DomainExample* const> examples) {
    if (cfg_.mode == EstimatorMode::oracle) return;
    for (const auto* ex : examples) standardizer_.check_dim(ex->x);
    for (const auto* ex : examples) sgd_step(ex->x, ex->domain == Domain::target ? 1.0 : 0.0);
  }

  [[nodiscard]] double logit(std::span<const double> x) const {
    if (cfg_.mode == EstimatorMode::oracle) throw invalid_state("oracle estimator has no classifier");
    standardizer_.check_dim(x);
    thread_local std::vector<double> z;
    z.resize(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - standardizer_.mean()[j]) / standardizer_.scale()[j];
    return forward(z, nullptr);
  }

  [[nodiscard]] double target_probability(std::span<const double> x) const { return stable_sigmoid(logit(x)); }

  [[nodiscard]] double predict(std::span<const double> x) const {
    if (cfg_.mode == EstimatorMode::oracle) {
      const double r = oracle_(x);
      if (!(r >= 0.0)) throw numeric_error("oracle ratio must be >= 0");
      return std::clamp(r, cfg_.w_min, cfg_.w_max);
    }
    return ratio_from_logit(logit(x), prior_factor(), cfg_.w_min, cfg_.w_max);
  }

  // Parameter access for snapshots.
  [[nodiscard]] const std::vector<double>& output_weights() const { return weights_; }
  [[nodiscard]] double output_bias() const { return bias_; }
  [[nodiscard]] const std::vector<double>& hidden_weights() const { return hidden_w_; }
  [[nodiscard]] const std::vector<double>& hidden_biases() const { return hidden_b_; }

  void set_parameters(std::vector<double> out_w, double out_b, std::vector<double> hid_w, std::vector<double> hid_b,
                      std::uint64_t steps) {
    if (out_w.size() != weights_.size() || hid_w.size() != hidden_w_.size() || hid_b.size() != hidden_b_.size()) {
      throw restore_error("estimator parameter shape mismatch");
    }
    weights_ = std::move(out_w);
    bias_ = out_b;
    hidden_w_ = std::move(hid_w);
    hidden_b_ = std::move(hid_b);
    steps_ = steps;
  }

 private:
  RatioEstimator(RatioEstimatorConfig cfg, FeatureStandardizer st, RatioFn fn)
      : cfg_(cfg), standardizer_(std::move(st)), oracle_(std::move(fn)) {}

  // Returns the logit; when `hidden` is given it receives the hidden activations.
  double forward(std::span<const double> z, std::vector<double>* hidden) const {
    if (cfg_.mode == EstimatorMode::logistic) {
      double s = bias_;
      for (std::size_t j = 0; j < z.size(); ++j) s += weights_[j] * z[j];
      return s;
    }
    const std::size_t h = cfg_.hidden_width;
    const std::size_t d = z.size();
    double s = bias_;
    if (hidden) hidden->resize(h);
    for (std::size_t k = 0; k < h; ++k) {
      double a = hidden_b_[k];
      for (std::size_t j = 0; j < d; ++j) a += hidden_w_[k * d + j] * z[j];
      const double act = a > 0.0 ? a : 0.0;
      if (hidden) (*hidden)[k] = act;
      s += weights_[k] * act;
    }
    return s;
  }

  void sgd_step(std::span<const double> x, double label) {
    const std::size_t d = x.size();
    std::vector<double> z(d);
    for (std::size_t j = 0; j < d; ++j) z[j] = (x[j] - standardizer_.mean()[j]) / standardizer_.scale()[j];
    const double lr = cfg_.learning_rate;
    if (cfg_.mode == EstimatorMode::logistic) {
      const double g = stable_sigmoid(forward(z, nullptr)) - label;
      for (std::size_t j = 0; j < d; ++j) weights_[j] -= lr * g * z[j];
      bias_ -= lr * g;
    } else {
      std::vector<double> hidden;
      const double g = stable_sigmoid(forward(z, &hidden)) - label;
      const std::size_t h = cfg_.hidden_width;
      for (std::size_t k = 0; k < h; ++k) {
        if (hidden[k] > 0.0) {
          const double da = g * weights_[k];
          for (std::size_t j = 0; j < d; ++j) hidden_w_[k * d + j] -= lr * da * z[j];
          hidden_b_[k] -= lr * da;
        }
        weights_[k] -= lr * g * hidden[k];
      }
      bias_ -= lr * g;
    }
    ++steps_;
  }

  RatioEstimatorConfig cfg_;
  FeatureStandardizer standardizer_;
  RatioFn oracle_;
  std::vector<double> weights_;
  double bias_ = 0.0;
  std::vector<double> hidden_w_;
  std::vector<double> hidden_b_;
  std::size_t n_source_ = 0;
  std::size_t n_target_ = 0;
  std::uint64_t steps_ = 0;
};

// Raw ratio masses w(x_1..x_n, x_test); normalized inside WeightVector.
inline WeightVector weights_from_ratios(std::vector<double> masses) {
  compensated_sum total;
  for (double m : masses) total.add(m);
  if (!(total.value() > 0.0)) {
    warn("all density ratios are zero; falling back to uniform weights");
    return WeightVector::uniform(masses.size());
  }
  return WeightVector::from_masses(std::move(masses));
}

inline WeightVector conformal_weights(const RatioEstimator& est, const std::vector<feature_vector>& cal_features,
                                      std::span<const double> test_feature) {
  if (cal_features.empty()) throw invalid_state("conformal weights need a calibration set");
  std::vector<double> masses;
  masses.reserve(cal_features.size() + 1);
  for (const auto& x : cal_features) masses.push_back(est.predict(x));
  masses.push_back(est.predict(test_feature));
  return weights_from_ratios(std::move(masses));
}

}  // namespace watch
