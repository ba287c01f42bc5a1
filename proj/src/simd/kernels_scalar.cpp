#include <cmath>

#include "emrp/simd/kernels.hpp"

namespace emrp::simd {
namespace {

double logistic_loglik_scalar(const double* eta, const double* y, const double* n, double* resid,
                              std::size_t len) {
  double ll = 0.0;
  for (std::size_t r = 0; r < len; ++r) {
    const double e = eta[r];
    const double t = std::exp(-std::fabs(e));
    const double softplus = std::fmax(e, 0.0) + std::log1p(t);
    const double p = e >= 0.0 ? 1.0 / (1.0 + t) : t / (1.0 + t);
    ll += y[r] * e - n[r] * softplus;
    resid[r] = y[r] - n[r] * p;
  }
  return ll;
}

double dot_scalar(const double* a, const double* b, std::size_t len) {
  double s = 0.0;
  for (std::size_t i = 0; i < len; ++i) s += a[i] * b[i];
  return s;
}

void masked_dot2_scalar(const double* w, const double* v, const double* mask, std::size_t len,
                        double* wv, double* wsum) {
  double a = 0.0;
  double b = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double wm = w[i] * mask[i];
    a += wm * v[i];
    b += wm;
  }
  *wv = a;
  *wsum = b;
}

constexpr KernelTable kScalar{Isa::scalar, "scalar", &logistic_loglik_scalar, &dot_scalar,
                              &masked_dot2_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace emrp::simd
