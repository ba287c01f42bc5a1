#include "emrp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emrp/errors.hpp"

namespace emrp {

double mean(std::span<const double> x) {
  if (x.empty()) throw ValidationError("mean of empty range");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double mu = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double quantile(std::span<const double> x, double prob) {
  if (x.empty()) throw ValidationError("quantile of empty range");
  if (prob < 0.0 || prob > 1.0) throw ValidationError("quantile probability outside [0, 1]");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

DrawSummary summarize_draws(std::span<const double> x) {
  return {mean(x), sample_sd(x), quantile(x, 0.025), quantile(x, 0.975)};
}

}  // namespace emrp
