#pragma once

// Dense double-precision kernels used by every tensor op.
//
// Two implementations exist: a portable scalar reference and an AVX2/FMA
// variant. The active table is chosen once at first use from CPUID, and can
// be forced with the AGPI_SIMD environment variable ("scalar" or "avx2").
// Both variants produce results equal up to floating-point reassociation;
// tests/simd_equivalence_test.cpp pins the tolerance.

#include <cstddef>
#include <string_view>

namespace agpi::simd {

enum class Isa { kScalar, kAvx2 };

// Row-major C = alpha * op(A) * op(B) + beta * C, where op(A) is m x k and
// op(B) is k x n. With beta == 0, C is overwritten (NaNs in C are ignored).
using GemmFn = void (*)(bool trans_a, bool trans_b, int m, int n, int k,
                        double alpha, const double* a, int lda,
                        const double* b, int ldb, double beta, double* c,
                        int ldc);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
// y += alpha * x
using AxpyFn = void (*)(std::size_t n, double alpha, const double* x,
                        double* y);
using SquaredDistanceFn = double (*)(const double* x, const double* y,
                                     std::size_t n);

struct KernelTable {
  Isa isa;
  GemmFn gemm;
  DotFn dot;
  AxpyFn axpy;
  SquaredDistanceFn squared_distance;
};

const KernelTable& scalar_kernels();
// nullptr when the build has no AVX2 variant.
const KernelTable* avx2_kernels();

bool cpu_supports_avx2();
std::string_view isa_name(Isa isa);

const KernelTable& active();
// Throws std::runtime_error if the requested variant is unavailable.
void select(Isa isa);

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  active().gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
}
inline double dot(const double* x, const double* y, std::size_t n) {
  return active().dot(x, y, n);
}
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  active().axpy(n, alpha, x, y);
}
inline double squared_distance(const double* x, const double* y,
                               std::size_t n) {
  return active().squared_distance(x, y, n);
}

}  // namespace agpi::simd
