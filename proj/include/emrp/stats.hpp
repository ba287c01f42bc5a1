#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace emrp {

double mean(std::span<const double> x);

// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_sd(std::span<const double> x);

// Type-7 quantile: linear interpolation between order statistics.
double quantile(std::span<const double> x, double prob);

struct DrawSummary {
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // 2.5th percentile
  double upper = 0.0;  // 97.5th percentile
};

DrawSummary summarize_draws(std::span<const double> x);

inline double expit(double eta) {
  // Split by sign so neither branch overflows.
  if (eta >= 0.0) {
    const double e = std::exp(-eta);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace emrp
