// AArch64 NEON variants (two doubles per register). Same approximations as
// the AVX2 file.

#include <arm_neon.h>

#include "emrp/simd/kernels.hpp"

namespace emrp::simd {
namespace {

inline float64x2_t splat(double v) { return vdupq_n_f64(v); }

inline float64x2_t fma(float64x2_t acc, float64x2_t a, float64x2_t b) {
  return vfmaq_f64(acc, a, b);  // acc + a * b
}

inline float64x2_t exp_nonpositive(float64x2_t x) {
  x = vmaxq_f64(x, splat(-700.0));
  const float64x2_t n = vrndnq_f64(vmulq_f64(x, splat(1.4426950408889634073599)));
  x = vfmsq_f64(x, n, splat(6.93145751953125E-1));
  x = vfmsq_f64(x, n, splat(1.42860682030941723212E-6));
  const float64x2_t xx = vmulq_f64(x, x);
  float64x2_t p = fma(splat(3.02994407707441961300E-2), splat(1.26177193074810590878E-4), xx);
  p = fma(splat(9.99999999999999999910E-1), p, xx);
  const float64x2_t px = vmulq_f64(x, p);
  float64x2_t q = fma(splat(2.52448340349684104192E-3), splat(3.00198505138664455042E-6), xx);
  q = fma(splat(2.27265548208155028766E-1), q, xx);
  q = fma(splat(2.00000000000000000009E0), q, xx);
  float64x2_t r = vdivq_f64(px, vsubq_f64(q, px));
  r = fma(splat(1.0), splat(2.0), r);
  int64x2_t bits = vaddq_s64(vcvtq_s64_f64(n), vdupq_n_s64(1023));
  bits = vshlq_n_s64(bits, 52);
  return vmulq_f64(r, vreinterpretq_f64_s64(bits));
}

inline float64x2_t log1p_unit(float64x2_t t) {
  const float64x2_t one = splat(1.0);
  const uint64x2_t upper = vcgeq_f64(t, splat(0.41421356237309504880));
  const float64x2_t f = vbslq_f64(upper, vmulq_f64(splat(0.5), vsubq_f64(t, one)), t);
  const float64x2_t e = vbslq_f64(upper, one, splat(0.0));
  const float64x2_t z = vmulq_f64(f, f);

  float64x2_t p = splat(1.01875663804580931796E-4);
  p = fma(splat(4.97494994976747001425E-1), p, f);
  p = fma(splat(4.70579119878881725854E0), p, f);
  p = fma(splat(1.44989225341610930846E1), p, f);
  p = fma(splat(1.79368678507819816313E1), p, f);
  p = fma(splat(7.70838733755885391666E0), p, f);

  float64x2_t q = vaddq_f64(f, splat(1.12873587189167450590E1));
  q = fma(splat(4.52279145837532221105E1), q, f);
  q = fma(splat(8.29875266912776603211E1), q, f);
  q = fma(splat(7.11544750618563894466E1), q, f);
  q = fma(splat(2.31251620126765340583E1), q, f);

  float64x2_t y = vmulq_f64(vmulq_f64(f, z), vdivq_f64(p, q));
  y = vfmsq_f64(y, e, splat(2.121944400546905827679E-4));
  y = vfmsq_f64(y, splat(0.5), z);
  const float64x2_t r = vaddq_f64(f, y);
  return fma(r, e, splat(0.693359375));
}

inline float64x2_t logistic_block(float64x2_t e, float64x2_t y, float64x2_t n, float64x2_t* resid) {
  const float64x2_t one = splat(1.0);
  const float64x2_t zero = splat(0.0);
  const float64x2_t t = exp_nonpositive(vnegq_f64(vabsq_f64(e)));
  const float64x2_t softplus = vaddq_f64(vmaxq_f64(e, zero), log1p_unit(t));
  const uint64x2_t nonneg = vcgeq_f64(e, zero);
  const float64x2_t p = vdivq_f64(vbslq_f64(nonneg, one, t), vaddq_f64(one, t));
  *resid = vfmsq_f64(y, n, p);
  return vfmsq_f64(vmulq_f64(y, e), n, softplus);
}

double logistic_loglik_neon(const double* eta, const double* y, const double* n, double* resid,
                            std::size_t len) {
  float64x2_t acc = splat(0.0);
  std::size_t r = 0;
  for (; r + 2 <= len; r += 2) {
    float64x2_t res;
    acc = vaddq_f64(acc, logistic_block(vld1q_f64(eta + r), vld1q_f64(y + r), vld1q_f64(n + r), &res));
    vst1q_f64(resid + r, res);
  }
  if (r < len) {
    const double e[2] = {eta[r], 0.0};
    const double yy[2] = {y[r], 0.0};
    const double nn[2] = {n[r], 0.0};
    float64x2_t res;
    acc = vaddq_f64(acc, logistic_block(vld1q_f64(e), vld1q_f64(yy), vld1q_f64(nn), &res));
    resid[r] = vgetq_lane_f64(res, 0);
  }
  return vaddvq_f64(acc);
}

double dot_neon(const double* a, const double* b, std::size_t len) {
  float64x2_t acc = splat(0.0);
  std::size_t i = 0;
  for (; i + 2 <= len; i += 2) acc = fma(acc, vld1q_f64(a + i), vld1q_f64(b + i));
  double s = vaddvq_f64(acc);
  if (i < len) s += a[i] * b[i];
  return s;
}

void masked_dot2_neon(const double* w, const double* v, const double* mask, std::size_t len,
                      double* wv, double* wsum) {
  float64x2_t a = splat(0.0);
  float64x2_t b = splat(0.0);
  std::size_t i = 0;
  for (; i + 2 <= len; i += 2) {
    const float64x2_t wm = vmulq_f64(vld1q_f64(w + i), vld1q_f64(mask + i));
    a = fma(a, wm, vld1q_f64(v + i));
    b = vaddq_f64(b, wm);
  }
  double sa = vaddvq_f64(a);
  double sb = vaddvq_f64(b);
  if (i < len) {
    const double wm = w[i] * mask[i];
    sa += wm * v[i];
    sb += wm;
  }
  *wv = sa;
  *wsum = sb;
}

constexpr KernelTable kNeon{Isa::neon, "neon", &logistic_loglik_neon, &dot_neon, &masked_dot2_neon};

}  // namespace

const KernelTable* neon_table() { return &kNeon; }

}  // namespace emrp::simd
