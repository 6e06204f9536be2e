#pragma once

// Jumper betting strategies over the betting functions h_eps(p) = 1 + eps (p - 1/2),
// eps in {-1, 0, +1}. A simple jumper redistributes a fraction J of its wealth
// evenly across eps before each bet; the composite jumper averages simple
// jumpers over a grid of J values.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "watch/error.hpp"

namespace watch {

enum class BettingEpsilon : int { down = -1, none = 0, up = 1 };

inline constexpr std::array<BettingEpsilon, 3> kAllEpsilons{BettingEpsilon::down, BettingEpsilon::none,
                                                            BettingEpsilon::up};

inline constexpr double betting_function(BettingEpsilon eps, double p) {
  return 1.0 + static_cast<double>(static_cast<int>(eps)) * (p - 0.5);
}

inline constexpr std::array<double, 5> kDefaultJumpGrid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};

// Wealth is held as mantissa * 2^exponent so long runs neither overflow nor
// underflow; the capital split is kept as fractions summing to one.
class SimpleJumper {
 public:
  static constexpr double kRescaleHigh = 1e300;
  static constexpr double kRescaleLow = 1e-300;

  explicit SimpleJumper(double jump_rate) : jump_(jump_rate) {
    if (!(jump_rate > 0.0 && jump_rate <= 1.0)) throw config_error("jump rate J must lie in (0, 1]");
  }

  [[nodiscard]] double jump_rate() const { return jump_; }

  void step(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw invalid_input("p-value outside [0, 1]");
    // Jump phase: C_eps <- (1 - J) C_eps + J W / 3, expressed on fractions.
    for (double& f : frac_) f = (1.0 - jump_) * f + jump_ / 3.0;
    // Bet phase. The eps = 0 leg pays exactly 1, so the wealth factor is
    // 1 + (p - 1/2)(f_up - f_down), which is exactly 1 whenever f_up == f_down.
    const double h_down = betting_function(BettingEpsilon::down, p);
    const double h_up = betting_function(BettingEpsilon::up, p);
    const double factor = 1.0 + (p - 0.5) * (frac_[2] - frac_[0]);
    frac_[0] = frac_[0] * h_down / factor;
    frac_[1] = frac_[1] / factor;
    frac_[2] = frac_[2] * h_up / factor;
    mantissa_ *= factor;
    renormalize();
  }

  // True wealth ratio M_t / M_0; +inf when it exceeds the double range.
  [[nodiscard]] double wealth() const {
    if (exponent_ > 4096) return std::numeric_limits<double>::infinity();
    if (exponent_ < -4096) return 0.0;
    return std::ldexp(mantissa_, static_cast<int>(exponent_));
  }
  [[nodiscard]] double log_wealth() const {
    return std::log(mantissa_) + static_cast<double>(exponent_) * std::log(2.0);
  }
  [[nodiscard]] double capital(BettingEpsilon eps) const {
    return wealth() * frac_[static_cast<std::size_t>(static_cast<int>(eps) + 1)];
  }
  [[nodiscard]] const std::array<double, 3>& fractions() const { return frac_; }
  [[nodiscard]] double mantissa() const { return mantissa_; }
  [[nodiscard]] std::int64_t exponent() const { return exponent_; }

  // Used by snapshot restore.
  static SimpleJumper from_parts(double jump, std::array<double, 3> frac, double mantissa, std::int64_t exponent) {
    SimpleJumper s(jump);
    s.frac_ = frac;
    s.mantissa_ = mantissa;
    s.exponent_ = exponent;
    return s;
  }

 private:
  void renormalize() {
    if (mantissa_ > kRescaleHigh || (mantissa_ > 0.0 && mantissa_ < kRescaleLow)) {
      int e = 0;
      mantissa_ = std::frexp(mantissa_, &e);
      exponent_ += e;
    }
  }

  double jump_;
  std::array<double, 3> frac_{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double mantissa_ = 1.0;
  std::int64_t exponent_ = 0;
};

// Average of simple jumpers over the J grid, each starting with wealth 1.
class CompositeJumper {
 public:
  CompositeJumper() : CompositeJumper(std::span<const double>(kDefaultJumpGrid)) {}

  explicit CompositeJumper(std::span<const double> jump_grid) {
    if (jump_grid.empty()) throw config_error("jump grid must be nonempty");
    components_.reserve(jump_grid.size());
    for (double j : jump_grid) components_.emplace_back(j);
  }

  explicit CompositeJumper(std::vector<SimpleJumper> components) : components_(std::move(components)) {
    if (components_.empty()) throw config_error("jump grid must be nonempty");
  }

  void step(double p) {
    for (auto& c : components_) c.step(p);
  }

  [[nodiscard]] double wealth() const {
    double s = 0.0;
    for (const auto& c : components_) s += c.wealth();
    return s / static_cast<double>(components_.size());
  }

  [[nodiscard]] double log_wealth() const {
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& c : components_) hi = std::max(hi, c.log_wealth());
    double s = 0.0;
    for (const auto& c : components_) s += std::exp(c.log_wealth() - hi);
    return hi + std::log(s / static_cast<double>(components_.size()));
  }

  [[nodiscard]] const std::vector<SimpleJumper>& components() const { return components_; }

  void reset() {
    for (auto& c : components_) c = SimpleJumper(c.jump_rate());
  }

 private:
  std::vector<SimpleJumper> components_;
};

}  // namespace watch
