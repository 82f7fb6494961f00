#pragma once

#include <cmath>
#include <numbers>

namespace kamp {

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Upper tail P(W > x), accurate for large positive x.
inline double normal_sf(double x) {
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

/// Soft-thresholding operator sgn(x) * max(|x| - t, 0).
inline double soft_threshold(double x, double t) {
  if (x > t) {
    return x - t;
  }
  if (x < -t) {
    return x + t;
  }
  return 0.0;
}

} // namespace kamp
