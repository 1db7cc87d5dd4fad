#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace ordprior::math {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// log(1 + exp(x)) without overflow or underflow.
inline double log1p_exp(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// log(sigmoid(x)).
inline double log_sigmoid(double x) noexcept { return -log1p_exp(-x); }

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

/// log(1 - exp(x)) for x <= 0.
inline double log1m_exp(double x) noexcept {
  if (x > -std::numbers::ln2) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

inline double log_sum_exp(double a, double b) noexcept {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = a > b ? a : b;
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace ordprior::math
