#include <cstdlib>
#include <stdexcept>
#include <string>

#include "agpi/simd/kernels.hpp"

namespace agpi::simd {

#ifdef AGPI_HAVE_AVX2
const KernelTable& avx2_table();
#endif

namespace {

const KernelTable* choose_default() {
  if (const char* env = std::getenv("AGPI_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && avx2_kernels() != nullptr) return avx2_kernels();
  }
  if (avx2_kernels() != nullptr) return avx2_kernels();
  return &scalar_kernels();
}

const KernelTable*& current() {
  static const KernelTable* table = choose_default();
  return table;
}

}  // namespace

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* avx2_kernels() {
#ifdef AGPI_HAVE_AVX2
  if (cpu_supports_avx2()) return &avx2_table();
#endif
  return nullptr;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& active() { return *current(); }

void select(Isa isa) {
  if (isa == Isa::kScalar) {
    current() = &scalar_kernels();
    return;
  }
  const KernelTable* t = avx2_kernels();
  if (t == nullptr) throw std::runtime_error("AVX2 kernels unavailable on this CPU/build");
  current() = t;
}

}  // namespace agpi::simd
