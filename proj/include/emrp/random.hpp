#pragma once

// Seeded RNG streams and the handful of samplers the library needs beyond
// <random>. Every stochastic routine takes an explicit Rng&; independent work
// units derive their own stream with stream_seed() so results do not depend
// on scheduling or thread count.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace emrp {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return mix64(master ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t stream) {
  return Rng(stream_seed(master, stream));
}

double uniform01(Rng& rng);
double standard_normal(Rng& rng);
double standard_exponential(Rng& rng);
double gamma(Rng& rng, double shape);
std::uint64_t binomial(Rng& rng, std::uint64_t trials, double p);

// Dirichlet(alpha) into `out`; entries with alpha == 0 get probability 0.
void dirichlet(Rng& rng, std::span<const double> alpha, std::span<double> out);

// Multinomial(trials; p) into `out` by sequential conditional binomials.
// `p` need not be normalized.
void multinomial(Rng& rng, std::uint64_t trials, std::span<const double> p,
                 std::span<std::uint64_t> out);

// Multinomial(trials; p) by merging `trials` sorted uniforms against the
// cumulative probabilities. Linear in trials + categories; used when both are
// of the same order (bootstrap resampling).
void multinomial_sorted(Rng& rng, std::uint64_t trials, std::span<const double> p,
                        std::span<std::uint64_t> out);

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

}  // namespace emrp
