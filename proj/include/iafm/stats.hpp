#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "iafm/error.hpp"

namespace iafm {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Quantile by linear interpolation between order statistics at
/// h = (n - 1) q (the default of R and NumPy).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "quantile of empty input");
  if (!(q >= 0.0 && q <= 1.0))
    throw Error(ErrorCode::InvalidParameter, "quantile level outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::span<const double> values, double q) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, q);
}

inline double mean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "mean of empty input");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
inline double sample_sd(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

struct DistributionSummary {
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

inline DistributionSummary summarize(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return {mean(values), quantile_sorted(sorted, 0.25),
          quantile_sorted(sorted, 0.5), quantile_sorted(sorted, 0.75),
          sample_sd(values), values.size()};
}

}  // namespace iafm
