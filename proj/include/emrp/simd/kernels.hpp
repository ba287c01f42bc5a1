#pragma once

// Data-parallel inner loops with a scalar reference implementation and
// vectorized variants selected once at runtime.
//
// Every variant must agree with the scalar reference to within a few ulps per
// element; tests/test_simd.cpp checks each compiled variant against it. Set
// EMRP_SIMD=scalar (or avx2, neon) to force a specific table.

#include <cstddef>
#include <span>
#include <vector>

namespace emrp::simd {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  const char* name;

  // Binomial-logit log likelihood over rows: sum_r y_r * eta_r - n_r * log(1 + exp(eta_r)).
  // Writes the score y_r - n_r * expit(eta_r) to resid.
  double (*logistic_loglik)(const double* eta, const double* y, const double* n, double* resid,
                            std::size_t len);

  double (*dot)(const double* a, const double* b, std::size_t len);

  // Over rows where mask is 1: *wv = sum w * v * mask, *wsum = sum w * mask.
  void (*masked_dot2)(const double* w, const double* v, const double* mask, std::size_t len,
                      double* wv, double* wsum);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled into this build.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Compiled variants the running CPU can execute, scalar first.
std::vector<const KernelTable*> available_tables();

// The table chosen for this process (EMRP_SIMD override, else the widest available).
const KernelTable& active();

inline double logistic_loglik(std::span<const double> eta, std::span<const double> y,
                              std::span<const double> n, std::span<double> resid) {
  return active().logistic_loglik(eta.data(), y.data(), n.data(), resid.data(), eta.size());
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

struct WeightedSum {
  double weighted = 0.0;
  double weight = 0.0;
};

inline WeightedSum masked_dot2(std::span<const double> w, std::span<const double> v,
                               std::span<const double> mask) {
  WeightedSum out;
  active().masked_dot2(w.data(), v.data(), mask.data(), w.size(), &out.weighted, &out.weight);
  return out;
}

}  // namespace emrp::simd
