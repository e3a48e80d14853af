#include <vector>

#include "agpi/simd/kernels.hpp"

namespace agpi::simd {
namespace {

void scale_rows(int m, int n, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) row[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
}

void gemm_scalar(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  scale_rows(m, n, beta, c, ldc);
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;
  const std::ptrdiff_t a_rs = trans_a ? 1 : lda;
  const std::ptrdiff_t a_cs = trans_a ? lda : 1;
  if (!trans_b) {
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int p = 0; p < k; ++p) {
        const double aip = alpha * a[i * a_rs + p * a_cs];
        if (aip == 0.0) continue;
        const double* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
    return;
  }
  // op(B)(p, j) = B[j * ldb + p]
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const double* bcol = b + static_cast<std::ptrdiff_t>(j) * ldb;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[i * a_rs + p * a_cs] * bcol[p];
      crow[j] += alpha * acc;
    }
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance_scalar(const double* x, const double* y,
                               std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

constexpr KernelTable kScalarTable{Isa::kScalar, gemm_scalar, dot_scalar,
                                   axpy_scalar, squared_distance_scalar};

}  // namespace

const KernelTable& scalar_kernels() { return kScalarTable; }

}  // namespace agpi::simd
