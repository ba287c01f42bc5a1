// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma,
// so it must not instantiate inline library code shared with other TUs; the
// tails are handled with masked loads instead of scalar fallbacks.

#include <immintrin.h>

#include "emrp/simd/kernels.hpp"

namespace emrp::simd {
namespace {

inline __m256d poly3(__m256d x, double c0, double c1, double c2) {
  return _mm256_fmadd_pd(_mm256_fmadd_pd(_mm256_set1_pd(c0), x, _mm256_set1_pd(c1)), x,
                         _mm256_set1_pd(c2));
}

// exp(x) for x <= 0 (Cephes rational approximation with 2^n reconstruction).
inline __m256d exp_nonpositive(__m256d x) {
  x = _mm256_max_pd(x, _mm256_set1_pd(-700.0));
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634073599)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93145751953125E-1), x);
  x = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.42860682030941723212E-6), x);
  const __m256d xx = _mm256_mul_pd(x, x);
  const __m256d px =
      _mm256_mul_pd(x, poly3(xx, 1.26177193074810590878E-4, 3.02994407707441961300E-2,
                             9.99999999999999999910E-1));
  __m256d qx = poly3(xx, 3.00198505138664455042E-6, 2.52448340349684104192E-3,
                     2.27265548208155028766E-1);
  qx = _mm256_fmadd_pd(qx, xx, _mm256_set1_pd(2.00000000000000000009E0));
  __m256d r = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  r = _mm256_fmadd_pd(_mm256_set1_pd(2.0), r, _mm256_set1_pd(1.0));
  // Scale by 2^n through the exponent field; n is in [-1010, 0].
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i bits = _mm256_cvtepi32_epi64(n32);
  bits = _mm256_add_epi64(bits, _mm256_set1_epi64x(1023));
  bits = _mm256_slli_epi64(bits, 52);
  return _mm256_mul_pd(r, _mm256_castsi256_pd(bits));
}

// log(1 + t) for t in [0, 1].
inline __m256d log1p_unit(__m256d t) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d upper = _mm256_cmp_pd(t, _mm256_set1_pd(0.41421356237309504880), _CMP_GE_OQ);
  // Below sqrt(2) - 1 the reduced argument is t itself (exponent 0); above it
  // is (1 + t) / 2 - 1 with exponent 1.
  const __m256d f = _mm256_blendv_pd(t, _mm256_mul_pd(_mm256_set1_pd(0.5), _mm256_sub_pd(t, one)),
                                     upper);
  const __m256d e = _mm256_and_pd(upper, one);
  const __m256d z = _mm256_mul_pd(f, f);

  __m256d p = _mm256_set1_pd(1.01875663804580931796E-4);
  p = _mm256_fmadd_pd(p, f, _mm256_set1_pd(4.97494994976747001425E-1));
  p = _mm256_fmadd_pd(p, f, _mm256_set1_pd(4.70579119878881725854E0));
  p = _mm256_fmadd_pd(p, f, _mm256_set1_pd(1.44989225341610930846E1));
  p = _mm256_fmadd_pd(p, f, _mm256_set1_pd(1.79368678507819816313E1));
  p = _mm256_fmadd_pd(p, f, _mm256_set1_pd(7.70838733755885391666E0));

  __m256d q = _mm256_add_pd(f, _mm256_set1_pd(1.12873587189167450590E1));
  q = _mm256_fmadd_pd(q, f, _mm256_set1_pd(4.52279145837532221105E1));
  q = _mm256_fmadd_pd(q, f, _mm256_set1_pd(8.29875266912776603211E1));
  q = _mm256_fmadd_pd(q, f, _mm256_set1_pd(7.11544750618563894466E1));
  q = _mm256_fmadd_pd(q, f, _mm256_set1_pd(2.31251620126765340583E1));

  __m256d y = _mm256_mul_pd(_mm256_mul_pd(f, z), _mm256_div_pd(p, q));
  y = _mm256_fnmadd_pd(e, _mm256_set1_pd(2.121944400546905827679E-4), y);
  y = _mm256_fnmadd_pd(_mm256_set1_pd(0.5), z, y);
  __m256d r = _mm256_add_pd(f, y);
  return _mm256_fmadd_pd(e, _mm256_set1_pd(0.693359375), r);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline __m256i tail_mask(std::size_t remaining) {
  const __m256i idx = _mm256_set_epi64x(3, 2, 1, 0);
  return _mm256_cmpgt_epi64(_mm256_set1_epi64x(static_cast<long long>(remaining)), idx);
}

inline __m256d logistic_block(__m256d e, __m256d y, __m256d n, __m256d* resid) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d abs_e = _mm256_andnot_pd(_mm256_set1_pd(-0.0), e);
  const __m256d t = exp_nonpositive(_mm256_sub_pd(_mm256_setzero_pd(), abs_e));
  const __m256d softplus = _mm256_add_pd(_mm256_max_pd(e, _mm256_setzero_pd()), log1p_unit(t));
  const __m256d denom = _mm256_add_pd(one, t);
  const __m256d nonneg = _mm256_cmp_pd(e, _mm256_setzero_pd(), _CMP_GE_OQ);
  const __m256d p = _mm256_div_pd(_mm256_blendv_pd(t, one, nonneg), denom);
  *resid = _mm256_fnmadd_pd(n, p, y);
  return _mm256_fnmadd_pd(n, softplus, _mm256_mul_pd(y, e));
}

double logistic_loglik_avx2(const double* eta, const double* y, const double* n, double* resid,
                            std::size_t len) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t r = 0;
  for (; r + 4 <= len; r += 4) {
    __m256d res;
    acc = _mm256_add_pd(acc, logistic_block(_mm256_loadu_pd(eta + r), _mm256_loadu_pd(y + r),
                                            _mm256_loadu_pd(n + r), &res));
    _mm256_storeu_pd(resid + r, res);
  }
  if (r < len) {
    const __m256i m = tail_mask(len - r);
    __m256d res;
    acc = _mm256_add_pd(acc, logistic_block(_mm256_maskload_pd(eta + r, m),
                                            _mm256_maskload_pd(y + r, m),
                                            _mm256_maskload_pd(n + r, m), &res));
    _mm256_maskstore_pd(resid + r, m, res);
  }
  return hsum(acc);
}

double dot_avx2(const double* a, const double* b, std::size_t len) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= len; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  if (i < len) {
    const __m256i m = tail_mask(len - i);
    acc1 = _mm256_fmadd_pd(_mm256_maskload_pd(a + i, m), _mm256_maskload_pd(b + i, m), acc1);
  }
  return hsum(_mm256_add_pd(acc0, acc1));
}

void masked_dot2_avx2(const double* w, const double* v, const double* mask, std::size_t len,
                      double* wv, double* wsum) {
  __m256d a = _mm256_setzero_pd();
  __m256d b = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= len; i += 4) {
    const __m256d wm = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(mask + i));
    a = _mm256_fmadd_pd(wm, _mm256_loadu_pd(v + i), a);
    b = _mm256_add_pd(b, wm);
  }
  if (i < len) {
    const __m256i m = tail_mask(len - i);
    const __m256d wm = _mm256_mul_pd(_mm256_maskload_pd(w + i, m), _mm256_maskload_pd(mask + i, m));
    a = _mm256_fmadd_pd(wm, _mm256_maskload_pd(v + i, m), a);
    b = _mm256_add_pd(b, wm);
  }
  *wv = hsum(a);
  *wsum = hsum(b);
}

constexpr KernelTable kAvx2{Isa::avx2, "avx2", &logistic_loglik_avx2, &dot_avx2,
                            &masked_dot2_avx2};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace emrp::simd
