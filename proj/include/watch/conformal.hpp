#pragma once

// Conformal primitives: nonconformity scores, standard and weighted conformal
// p-values, the weighted (1 - alpha) quantile with the +infinity test-point
// adjustment, and the matching prediction interval for residual scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "watch/error.hpp"
#include "watch/numeric.hpp"

namespace watch {

using feature_vector = std::vector<double>;

class NonconformityScore {
 public:
  explicit NonconformityScore(double v) : value_(v) {
    if (!std::isfinite(v) || v < 0.0) {
      throw invalid_input("nonconformity score must be finite and >= 0, got " + std::to_string(v));
    }
  }

  [[nodiscard]] double value() const { return value_; }
  friend bool operator==(NonconformityScore, NonconformityScore) = default;

 private:
  double value_;
};

struct PValue {
  double value = 0.0;
  double randomizer_u = 0.0;
  bool penalized = false;
};

// Result of a weighted quantile: a finite score or the distinguished +infinity.
class ScoreQuantile {
 public:
  static ScoreQuantile finite(double v) { return ScoreQuantile(v, false); }
  static ScoreQuantile infinite() { return ScoreQuantile(0.0, true); }

  [[nodiscard]] bool is_infinite() const { return infinite_; }
  [[nodiscard]] double value() const {
    return infinite_ ? std::numeric_limits<double>::infinity() : value_;
  }

  friend bool operator==(const ScoreQuantile&, const ScoreQuantile&) = default;

 private:
  ScoreQuantile(double v, bool inf) : value_(v), infinite_(inf) {}
  double value_;
  bool infinite_;
};

struct PredictionInterval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool informative = false;

  [[nodiscard]] bool contains(double y) const {
    return !informative || (lower <= y && y <= upper);
  }
  [[nodiscard]] double width() const {
    return informative ? upper - lower : std::numeric_limits<double>::infinity();
  }
};

// ---------------------------------------------------------------------------
// Weight vectors
// ---------------------------------------------------------------------------

// Nonnegative weights over calibration indices plus one trailing test index.
//
// Stored as raw masses with an exact-as-possible total; the normalized weight
// of index i is mass(i) / total_mass(). Keeping masses un-normalized lets
// unit masses reproduce the standard conformal p-value bit for bit.
class WeightVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  static WeightVector from_masses(std::vector<double> masses) {
    if (masses.size() < 2) {
      throw invalid_weights("weight vector needs at least one calibration entry and the test entry");
    }
    compensated_sum total;
    for (double m : masses) {
      if (!std::isfinite(m) || m < 0.0) throw invalid_weights("weight masses must be finite and >= 0");
      total.add(m);
    }
    const double t = total.value();
    if (!(t > 0.0)) throw invalid_weights("weight masses sum to zero");
    return WeightVector(std::move(masses), t);
  }

  // Already-normalized weights; rejects vectors not summing to 1 within 1e-9.
  static WeightVector normalized(std::vector<double> weights) {
    auto w = from_masses(std::move(weights));
    if (std::abs(w.total_ - 1.0) > kSumTolerance) {
      throw invalid_weights("weights sum to " + std::to_string(w.total_) + ", expected 1");
    }
    return w;
  }

  static WeightVector uniform(std::size_t size_with_test) {
    return from_masses(std::vector<double>(size_with_test, 1.0));
  }

  [[nodiscard]] std::size_t size() const { return masses_.size(); }
  [[nodiscard]] std::size_t calibration_size() const { return masses_.size() - 1; }
  [[nodiscard]] double mass(std::size_t i) const { return masses_[i]; }
  [[nodiscard]] double test_mass() const { return masses_.back(); }
  [[nodiscard]] double total_mass() const { return total_; }
  [[nodiscard]] std::span<const double> masses() const { return masses_; }

  [[nodiscard]] double operator[](std::size_t i) const { return masses_[i] / total_; }
  [[nodiscard]] double test_weight() const { return masses_.back() / total_; }

  [[nodiscard]] std::vector<double> weights() const {
    std::vector<double> out(masses_.size());
    for (std::size_t i = 0; i < masses_.size(); ++i) out[i] = masses_[i] / total_;
    return out;
  }

  // Penalization condition: the test point carries at least alpha of the mass.
  [[nodiscard]] bool test_mass_at_least(double alpha) const { return !(test_mass() < alpha * total_); }

 private:
  WeightVector(std::vector<double> m, double total) : masses_(std::move(m)), total_(total) {}

  std::vector<double> masses_;
  double total_;
};

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

inline NonconformityScore score_abs_residual(double prediction, double label) {
  if (!std::isfinite(prediction) || !std::isfinite(label)) {
    throw invalid_input("residual score needs finite prediction and label");
  }
  return NonconformityScore(std::abs(label - prediction));
}

// One-minus-probability score for classifiers; image pipelines are out of scope
// but the hook keeps the score interface uniform.
inline NonconformityScore score_one_minus_prob(double prob_of_label) {
  if (!std::isfinite(prob_of_label) || prob_of_label < 0.0 || prob_of_label > 1.0) {
    throw invalid_input("class probability must lie in [0, 1]");
  }
  return NonconformityScore(1.0 - prob_of_label);
}

// Per-feature z-scoring. Fitted once on the initial calibration features.
class FeatureStandardizer {
 public:
  FeatureStandardizer() = default;
  FeatureStandardizer(std::vector<double> mean, std::vector<double> scale)
      : mean_(std::move(mean)), scale_(std::move(scale)) {
    if (mean_.size() != scale_.size()) throw invalid_input("standardizer mean/scale size mismatch");
    for (double s : scale_) {
      if (!(s > 0.0) || !std::isfinite(s)) throw invalid_input("standardizer scale must be positive");
    }
  }

  static FeatureStandardizer identity(std::size_t dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  }

  // Zero-variance features keep unit scale.
  static FeatureStandardizer fit(const std::vector<feature_vector>& xs) {
    if (xs.empty()) throw invalid_state("cannot fit a standardizer on zero rows");
    const std::size_t d = xs.front().size();
    std::vector<double> mean(d, 0.0), scale(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
      compensated_sum s;
      for (const auto& x : xs) {
        if (x.size() != d) throw invalid_input("ragged feature rows");
        s.add(x[j]);
      }
      mean[j] = s.value() / static_cast<double>(xs.size());
      compensated_sum ss;
      for (const auto& x : xs) ss.add((x[j] - mean[j]) * (x[j] - mean[j]));
      const double var = xs.size() > 1 ? ss.value() / static_cast<double>(xs.size() - 1) : 0.0;
      if (var > 0.0 && std::isfinite(var)) scale[j] = std::sqrt(var);
    }
    return {std::move(mean), std::move(scale)};
  }

  [[nodiscard]] std::size_t dim() const { return mean_.size(); }
  [[nodiscard]] const std::vector<double>& mean() const { return mean_; }
  [[nodiscard]] const std::vector<double>& scale() const { return scale_; }

  [[nodiscard]] feature_vector apply(std::span<const double> x) const {
    check_dim(x);
    feature_vector z(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean_[j]) / scale_[j];
    return z;
  }

  [[nodiscard]] double distance(std::span<const double> a, std::span<const double> b) const {
    check_dim(a);
    check_dim(b);
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = (a[j] - b[j]) / scale_[j];
      s += d * d;
    }
    return std::sqrt(s);
  }

  void check_dim(std::span<const double> x) const {
    if (x.size() != mean_.size()) {
      throw invalid_input("feature dimension " + std::to_string(x.size()) + " does not match " +
                          std::to_string(mean_.size()));
    }
  }

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
};

inline NonconformityScore score_nn_distance(std::span<const double> x, const std::vector<feature_vector>& reference,
                                            const FeatureStandardizer& standardizer) {
  if (reference.empty()) throw invalid_state("nearest-neighbour score needs a nonempty reference set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : reference) best = std::min(best, standardizer.distance(x, r));
  return NonconformityScore(best);
}

inline NonconformityScore score_nn_distance(std::span<const double> x, const std::vector<feature_vector>& reference) {
  if (reference.empty()) throw invalid_state("nearest-neighbour score needs a nonempty reference set");
  return score_nn_distance(x, reference, FeatureStandardizer::identity(x.size()));
}

// ---------------------------------------------------------------------------
// Calibration set
// ---------------------------------------------------------------------------

class CalibrationSet {
 public:
  CalibrationSet(std::vector<double> scores, std::vector<feature_vector> features)
      : scores_(std::move(scores)), features_(std::move(features)) {
    if (scores_.empty()) throw invalid_input("calibration set must contain at least one point");
    if (scores_.size() != features_.size()) throw invalid_input("calibration scores/features length mismatch");
    for (double s : scores_) (void)NonconformityScore(s);
  }

  void append(double score, feature_vector x) {
    if (frozen_) throw invalid_state("calibration set is frozen");
    (void)NonconformityScore(score);
    if (!features_.empty() && x.size() != features_.front().size()) {
      throw invalid_input("feature dimension mismatch on calibration append");
    }
    scores_.push_back(score);
    features_.push_back(std::move(x));
  }

  void freeze() { frozen_ = true; }
  [[nodiscard]] bool frozen() const { return frozen_; }
  [[nodiscard]] std::size_t size() const { return scores_.size(); }
  [[nodiscard]] std::span<const double> scores() const { return scores_; }
  [[nodiscard]] const std::vector<feature_vector>& features() const { return features_; }

 private:
  std::vector<double> scores_;
  std::vector<feature_vector> features_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// p-values
// ---------------------------------------------------------------------------

namespace detail {
inline void check_u(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw invalid_input("tie-breaking randomizer must lie in [0, 1]");
}
}  // namespace detail

// (#{v_i > v} + u * #{v_i == v}) / (n + 1), the tie count including the test point.
inline PValue standard_p_value(std::span<const double> cal_scores, double test_score, double u) {
  detail::check_u(u);
  double gt = 0.0;
  double eq = 1.0;
  for (double v : cal_scores) {
    if (v > test_score) {
      gt += 1.0;
    } else if (v == test_score) {
      eq += 1.0;
    }
  }
  const double total = static_cast<double>(cal_scores.size()) + 1.0;
  return {(gt + u * eq) / total, u, false};
}

inline PValue standard_p_value(const CalibrationSet& cal, double test_score, double u) {
  return standard_p_value(cal.scores(), test_score, u);
}

// sum_i w_i [1{v_i > v_test} + u 1{v_i == v_test}]; the test score is the last entry.
inline PValue weighted_p_value(std::span<const double> scores_with_test, const WeightVector& weights, double u) {
  detail::check_u(u);
  if (scores_with_test.size() != weights.size()) {
    throw invalid_weights("weight vector length " + std::to_string(weights.size()) + " does not match " +
                          std::to_string(scores_with_test.size()) + " scores");
  }
  const double test = scores_with_test.back();
  compensated_sum gt, eq;
  for (std::size_t i = 0; i < scores_with_test.size(); ++i) {
    const double v = scores_with_test[i];
    if (v > test) {
      gt.add(weights.mass(i));
    } else if (v == test) {
      eq.add(weights.mass(i));
    }
  }
  const double p = (gt.value() + u * eq.value()) / weights.total_mass();
  return {std::min(p, 1.0), u, false};
}

// Same as weighted_p_value but with the calibration scores and test score passed separately.
inline PValue weighted_p_value(std::span<const double> cal_scores, double test_score, const WeightVector& weights,
                               double u) {
  detail::check_u(u);
  if (cal_scores.size() + 1 != weights.size()) throw invalid_weights("weight vector length mismatch");
  compensated_sum gt, eq;
  for (std::size_t i = 0; i < cal_scores.size(); ++i) {
    const double v = cal_scores[i];
    if (v > test_score) {
      gt.add(weights.mass(i));
    } else if (v == test_score) {
      eq.add(weights.mass(i));
    }
  }
  eq.add(weights.test_mass());
  const double p = (gt.value() + u * eq.value()) / weights.total_mass();
  return {std::min(p, 1.0), u, false};
}

// When the test mass reaches alpha the interval is the whole label
// space, so the p-value is derandomized (u = 0) to penalize noninformativeness.
inline PValue penalized_weighted_p_value(std::span<const double> cal_scores, double test_score,
                                         const WeightVector& weights, double alpha, double u) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_input("alpha must lie in (0, 1)");
  if (!weights.test_mass_at_least(alpha)) return weighted_p_value(cal_scores, test_score, weights, u);
  auto p = weighted_p_value(cal_scores, test_score, weights, 0.0);
  p.penalized = true;
  return p;
}

inline PValue penalized_weighted_p_value(std::span<const double> scores_with_test, const WeightVector& weights,
                                         double alpha, double u) {
  if (scores_with_test.empty()) throw invalid_input("no scores");
  return penalized_weighted_p_value(scores_with_test.first(scores_with_test.size() - 1), scores_with_test.back(),
                                    weights, alpha, u);
}

// ---------------------------------------------------------------------------
// Weighted quantile and intervals
// ---------------------------------------------------------------------------

// Indices of `scores` sorted by decreasing score.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// (1 - alpha)-quantile of sum_i w_i delta_{v_i} + w_test delta_{+inf}.
//
// The cumulative condition F(v) >= 1 - alpha is evaluated through its exact
// complement, mass{v_j > v} + w_test <= alpha, scanning scores from the top;
// this keeps decimal inputs such as 0.3 + 0.3 + 0.3 from tipping the boundary.
inline ScoreQuantile weighted_quantile(std::span<const double> cal_scores, std::span<const std::size_t> order_desc,
                                       const WeightVector& weights, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_input("alpha must lie in (0, 1)");
  if (cal_scores.size() + 1 != weights.size() || order_desc.size() != cal_scores.size()) {
    throw invalid_weights("weight vector length mismatch");
  }
  // A test mass above alpha leaves no finite quantile; at exactly alpha the
  // top score still reaches 1 - alpha.
  const double budget = alpha * weights.total_mass();
  compensated_sum tail(weights.test_mass());
  std::size_t k = 0;
  double q = std::numeric_limits<double>::quiet_NaN();
  while (k < order_desc.size()) {
    const double v = cal_scores[order_desc[k]];
    if (tail.value() > budget) break;
    q = v;
    // Everything tied at v moves above the next candidate.
    while (k < order_desc.size() && cal_scores[order_desc[k]] == v) {
      tail.add(weights.mass(order_desc[k]));
      ++k;
    }
  }
  if (std::isnan(q)) return ScoreQuantile::infinite();
  return ScoreQuantile::finite(q);
}

inline ScoreQuantile weighted_quantile(std::span<const double> cal_scores, const WeightVector& weights, double alpha) {
  const auto order = descending_order(cal_scores);
  return weighted_quantile(cal_scores, order, weights, alpha);
}

inline ScoreQuantile weighted_quantile(const CalibrationSet& cal, const WeightVector& weights, double alpha) {
  return weighted_quantile(cal.scores(), weights, alpha);
}

inline PredictionInterval prediction_interval(double prediction, const ScoreQuantile& q) {
  if (q.is_infinite()) return {};
  return {prediction - q.value(), prediction + q.value(), true};
}

// ---------------------------------------------------------------------------
// Brute-force oracle weights
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxOraclePoints = 8;

// w_i = sum_{sigma : sigma(test) = i} f(z_sigma) / sum_sigma f(z_sigma), enumerating
// every ordering of `points`. Positions listed in `fixed_positions` keep their
// own point (the restricted permutations used for the fixed-calibration weights).
template <typename Point, typename Density>
WeightVector oracle_weights_bruteforce(Density&& sequence_density, std::span<const Point> points,
                                       std::size_t test_index, std::span<const std::size_t> fixed_positions = {}) {
  const std::size_t m = points.size();
  if (m > kMaxOraclePoints) {
    throw complexity_error("oracle weights enumerate m! orderings; refusing m = " + std::to_string(m));
  }
  if (m < 2) throw invalid_input("oracle weights need at least two points");
  if (test_index >= m) throw invalid_input("test index out of range");

  std::vector<bool> fixed(m, false);
  for (std::size_t j : fixed_positions) {
    if (j >= m) throw invalid_input("fixed position out of range");
    if (j == test_index) throw invalid_input("the test position cannot be fixed");
    fixed[j] = true;
  }
  std::vector<std::size_t> free_pos;
  for (std::size_t j = 0; j < m; ++j) {
    if (!fixed[j]) free_pos.push_back(j);
  }
  std::vector<std::size_t> perm(free_pos);  // sorted, so next_permutation enumerates all
  std::vector<Point> seq(points.begin(), points.end());
  std::vector<compensated_sum> by_index(m);
  compensated_sum total;
  do {
    for (std::size_t k = 0; k < free_pos.size(); ++k) seq[free_pos[k]] = points[perm[k]];
    const double f = static_cast<double>(sequence_density(std::span<const Point>(seq)));
    if (!(f >= 0.0) || !std::isfinite(f)) throw invalid_input("joint density must be finite and >= 0");
    std::size_t src = test_index;
    for (std::size_t k = 0; k < free_pos.size(); ++k) {
      if (free_pos[k] == test_index) src = perm[k];
    }
    by_index[src].add(f);
    total.add(f);
  } while (std::next_permutation(perm.begin(), perm.end()));

  if (!(total.value() > 0.0)) throw invalid_weights("joint density vanishes on every ordering");
  // Reorder so the test point's own mass is last, matching WeightVector's layout.
  std::vector<double> masses;
  masses.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (i != test_index) masses.push_back(by_index[i].value());
  }
  masses.push_back(by_index[test_index].value());
  return WeightVector::from_masses(std::move(masses));
}

}  // namespace watch
