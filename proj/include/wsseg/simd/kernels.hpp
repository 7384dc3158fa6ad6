#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop arithmetic shared by the filtering and loss code. Each kernel
// has a portable scalar reference and, where the CPU allows, an AVX2+FMA
// variant. The active table is chosen once at startup from CPUID and can be
// overridden with WSSEG_SIMD=scalar|avx2 or set_isa().
namespace wsseg::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;

  // out[q] = exp(-0.5 * sum_k (center[k] - feat[k * stride + q])^2), q in [0, n).
  // feat is dimension-major (structure of arrays).
  void (*gaussian_row)(const double* center, const double* feat, std::size_t stride, int dims, std::size_t n,
                       double* out);

  double (*dot)(const double* a, const double* b, std::size_t n);

  // out[i] = mid[i] + 0.5 * (lo[i] + hi[i]). out may alias mid.
  void (*blur_tap)(const double* mid, const double* lo, const double* hi, std::size_t n, double* out);

  // out[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, std::size_t n, double* out);
};

bool isa_supported(Isa isa);
std::string_view isa_name(Isa isa);

/// Table for a specific ISA; throws if the CPU lacks it.
const KernelTable& kernels(Isa isa);
/// Table currently selected for the process.
const KernelTable& kernels();

Isa active_isa();
void set_isa(Isa isa);

namespace detail {
const KernelTable& scalar_table();
#if defined(WSSEG_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
}  // namespace detail

}  // namespace wsseg::simd
