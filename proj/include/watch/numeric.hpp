#pragma once

#include <cmath>
#include <span>

namespace watch {

// Neumaier-compensated running sum.
class compensated_sum {
 public:
  constexpr compensated_sum() = default;
  constexpr explicit compensated_sum(double init) : sum_(init) {}

  constexpr void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }

  constexpr compensated_sum& operator+=(double x) {
    add(x);
    return *this;
  }

  [[nodiscard]] constexpr double value() const { return sum_ + comp_; }
  [[nodiscard]] constexpr double raw_sum() const { return sum_; }
  [[nodiscard]] constexpr double compensation() const { return comp_; }

  constexpr void reset() {
    sum_ = 0.0;
    comp_ = 0.0;
  }

  // Restores a previously captured (sum, compensation) pair exactly.
  static constexpr compensated_sum from_parts(double sum, double comp) {
    compensated_sum s;
    s.sum_ = sum;
    s.comp_ = comp;
    return s;
  }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double accurate_sum(std::span<const double> xs) {
  compensated_sum s;
  for (double x : xs) s.add(x);
  return s.value();
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace watch
