#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "wsseg/simd/kernels.hpp"

namespace wsseg::simd {

namespace {

bool cpu_has_avx2() {
#if defined(WSSEG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("WSSEG_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && cpu_has_avx2()) return Isa::avx2;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& selected() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

const KernelTable& kernels(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return detail::scalar_table();
    case Isa::avx2:
#if defined(WSSEG_HAVE_AVX2)
      if (cpu_has_avx2()) return detail::avx2_table();
#endif
      break;
  }
  throw std::runtime_error("instruction set not available: " + std::string(isa_name(isa)));
}

const KernelTable& kernels() { return kernels(selected().load()); }

Isa active_isa() { return selected().load(); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::runtime_error("instruction set not available: " + std::string(isa_name(isa)));
  selected().store(isa);
}

}  // namespace wsseg::simd
