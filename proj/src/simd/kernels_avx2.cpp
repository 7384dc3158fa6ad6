// Compiled with -mavx2 -mfma. Only reached through the dispatcher after a
// CPUID check.

#include <immintrin.h>

#include <cmath>

#include "wsseg/simd/kernels.hpp"

namespace wsseg::simd::detail {

namespace {

// exp(x) for x <= 0 using the Cephes rational approximation. Relative error
// is within a few ulp; inputs below -708 flush to zero.
inline __m256d exp_nonpositive(__m256d x) {
  const __m256d lo = _mm256_set1_pd(-708.0);
  const __m256d underflow = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  x = _mm256_max_pd(x, lo);

  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  __m256d fx = _mm256_floor_pd(_mm256_fmadd_pd(x, log2e, _mm256_set1_pd(0.5)));
  x = _mm256_fnmadd_pd(fx, _mm256_set1_pd(6.93145751953125E-1), x);
  x = _mm256_fnmadd_pd(fx, _mm256_set1_pd(1.42860682030941723212E-6), x);

  const __m256d xx = _mm256_mul_pd(x, x);
  __m256d p = _mm256_set1_pd(1.26177193074810590878E-4);
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(3.02994407707441961300E-2));
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(9.99999999999999999910E-1));
  p = _mm256_mul_pd(p, x);
  __m256d q = _mm256_set1_pd(3.00198505138664455042E-6);
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.52448340349684104192E-3));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.27265548208155028766E-1));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.00000000000000000009E0));
  __m256d r = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  r = _mm256_fmadd_pd(_mm256_set1_pd(2.0), r, _mm256_set1_pd(1.0));

  // 2^fx assembled in the exponent field
  const __m128i n32 = _mm256_cvtpd_epi32(fx);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  n64 = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  r = _mm256_mul_pd(r, _mm256_castsi256_pd(n64));
  return _mm256_andnot_pd(underflow, r);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void gaussian_row(const double* center, const double* feat, std::size_t stride, int dims, std::size_t n,
                  double* out) {
  const __m256d half = _mm256_set1_pd(-0.5);
  std::size_t q = 0;
  for (; q + 4 <= n; q += 4) {
    __m256d d2 = _mm256_setzero_pd();
    for (int k = 0; k < dims; ++k) {
      const __m256d diff = _mm256_sub_pd(_mm256_set1_pd(center[k]), _mm256_loadu_pd(feat + k * stride + q));
      d2 = _mm256_fmadd_pd(diff, diff, d2);
    }
    _mm256_storeu_pd(out + q, exp_nonpositive(_mm256_mul_pd(half, d2)));
  }
  if (q < n) {
    alignas(32) double tmp[4] = {0, 0, 0, 0};
    __m256d d2 = _mm256_setzero_pd();
    for (int k = 0; k < dims; ++k) {
      for (std::size_t j = 0; j < n - q; ++j) tmp[j] = feat[k * stride + q + j];
      const __m256d diff = _mm256_sub_pd(_mm256_set1_pd(center[k]), _mm256_load_pd(tmp));
      d2 = _mm256_fmadd_pd(diff, diff, d2);
    }
    _mm256_store_pd(tmp, exp_nonpositive(_mm256_mul_pd(half, d2)));
    for (std::size_t j = 0; j < n - q; ++j) out[q + j] = tmp[j];
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double sum = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void blur_tap(const double* mid, const double* lo, const double* hi, std::size_t n, double* out) {
  const __m256d half = _mm256_set1_pd(0.5);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d s = _mm256_add_pd(_mm256_loadu_pd(lo + i), _mm256_loadu_pd(hi + i));
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(half, s, _mm256_loadu_pd(mid + i)));
  }
  for (; i < n; ++i) out[i] = mid[i] + 0.5 * (lo[i] + hi[i]);
}

void axpy(double alpha, const double* x, std::size_t n, double* out) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(out + i)));
  for (; i < n; ++i) out[i] += alpha * x[i];
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::avx2, gaussian_row, dot, blur_tap, axpy};
  return table;
}

}  // namespace wsseg::simd::detail
