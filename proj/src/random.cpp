#include "emrp/random.hpp"

#include <cmath>
#include <numeric>

#include "emrp/errors.hpp"

namespace emrp {

double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

double standard_exponential(Rng& rng) {
  return std::exponential_distribution<double>(1.0)(rng);
}

double gamma(Rng& rng, double shape) {
  if (shape == 1.0) return standard_exponential(rng);
  return std::gamma_distribution<double>(shape, 1.0)(rng);
}

std::uint64_t binomial(Rng& rng, std::uint64_t trials, double p) {
  if (trials == 0 || p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  // libstdc++'s rejection sampler is accurate for p <= 0.5; use symmetry above.
  if (p > 0.5) return trials - binomial(rng, trials, 1.0 - p);
  return std::binomial_distribution<std::uint64_t>(trials, p)(rng);
}

void dirichlet(Rng& rng, std::span<const double> alpha, std::span<double> out) {
  if (alpha.size() != out.size()) throw ValidationError("dirichlet: size mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (alpha[k] < 0.0) throw ValidationError("dirichlet: negative concentration");
    out[k] = alpha[k] > 0.0 ? gamma(rng, alpha[k]) : 0.0;
    total += out[k];
  }
  if (total <= 0.0) throw ValidationError("dirichlet: all concentrations are zero");
  for (auto& v : out) v /= total;
}

void multinomial(Rng& rng, std::uint64_t trials, std::span<const double> p,
                 std::span<std::uint64_t> out) {
  if (p.size() != out.size() || p.empty()) throw ValidationError("multinomial: size mismatch");
  double remaining_mass = std::accumulate(p.begin(), p.end(), 0.0);
  std::uint64_t remaining = trials;
  const std::size_t last = p.size() - 1;
  for (std::size_t k = 0; k < last; ++k) {
    if (remaining == 0 || p[k] <= 0.0) {
      out[k] = 0;
    } else {
      const double q = std::min(p[k] / remaining_mass, 1.0);
      out[k] = binomial(rng, remaining, q);
      remaining -= out[k];
    }
    remaining_mass -= p[k];
  }
  out[last] = remaining;
}

void multinomial_sorted(Rng& rng, std::uint64_t trials, std::span<const double> p,
                        std::span<std::uint64_t> out) {
  if (p.size() != out.size() || p.empty()) throw ValidationError("multinomial: size mismatch");
  std::fill(out.begin(), out.end(), 0);
  if (trials == 0) return;
  const double mass = std::accumulate(p.begin(), p.end(), 0.0);
  // Sorted uniforms as normalized partial sums of trials + 1 exponentials.
  std::vector<double> spacing(trials + 1);
  double total = 0.0;
  for (auto& e : spacing) {
    e = standard_exponential(rng);
    total += e;
  }
  std::size_t last_positive = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) last_positive = c;
  }
  std::size_t k = 0;
  double cum = p[0] / mass;
  double u = 0.0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    u += spacing[t] / total;
    while (u > cum && k < last_positive) {
      ++k;
      cum += p[k] / mass;
    }
    ++out[k];
  }
}

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace emrp
