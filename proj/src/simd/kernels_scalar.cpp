#include <cmath>

#include "wsseg/simd/kernels.hpp"

namespace wsseg::simd::detail {

namespace {

void gaussian_row(const double* center, const double* feat, std::size_t stride, int dims, std::size_t n,
                  double* out) {
  for (std::size_t q = 0; q < n; ++q) {
    double d2 = 0.0;
    for (int k = 0; k < dims; ++k) {
      const double diff = center[k] - feat[k * stride + q];
      d2 += diff * diff;
    }
    out[q] = std::exp(-0.5 * d2);
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void blur_tap(const double* mid, const double* lo, const double* hi, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = mid[i] + 0.5 * (lo[i] + hi[i]);
}

void axpy(double alpha, const double* x, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] += alpha * x[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, gaussian_row, dot, blur_tap, axpy};
  return table;
}

}  // namespace wsseg::simd::detail
