// Compiled with -mavx2 -mfma. Nothing here may run unless
// cpu_supports_avx2() returned true.

#include <immintrin.h>

#include <vector>

#include "agpi/simd/kernels.hpp"

namespace agpi::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void scale_rows(int m, int n, double beta, double* c, int ldc) {
  const __m256d vb = _mm256_set1_pd(beta);
  for (int i = 0; i < m; ++i) {
    double* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0) {
      int j = 0;
      for (; j + 4 <= n; j += 4) _mm256_storeu_pd(row + j, _mm256_setzero_pd());
      for (; j < n; ++j) row[j] = 0.0;
    } else if (beta != 1.0) {
      int j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(row + j, _mm256_mul_pd(vb, _mm256_loadu_pd(row + j)));
      for (; j < n; ++j) row[j] *= beta;
    }
  }
}

// C[0:4, 0:8] += A(4 x k, strided) * B(k x 8).
inline void micro_4x8(int k, const double* a, std::ptrdiff_t a_rs,
                      std::ptrdiff_t a_cs, double alpha, const double* b,
                      int ldb, double* c, int ldc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (int p = 0; p < k; ++p) {
    const double* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    const double* ap = a + p * a_cs;
    __m256d av = _mm256_broadcast_sd(ap);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(ap + a_rs);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(ap + 2 * a_rs);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(ap + 3 * a_rs);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  const __m256d va = _mm256_set1_pd(alpha);
  auto store = [&](double* row, __m256d lo, __m256d hi) {
    _mm256_storeu_pd(row, _mm256_fmadd_pd(va, lo, _mm256_loadu_pd(row)));
    _mm256_storeu_pd(row + 4,
                     _mm256_fmadd_pd(va, hi, _mm256_loadu_pd(row + 4)));
  };
  store(c, c00, c01);
  store(c + ldc, c10, c11);
  store(c + 2 * ldc, c20, c21);
  store(c + 3 * ldc, c30, c31);
}

// Row-at-a-time fallback for edge rows/columns.
void gemm_edge(int i0, int i1, int j0, int j1, int k, double alpha,
               const double* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs,
               const double* b, int ldb, double* c, int ldc) {
  for (int i = i0; i < i1; ++i) {
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const double aip = alpha * a[i * a_rs + p * a_cs];
      if (aip == 0.0) continue;
      const double* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      const __m256d va = _mm256_set1_pd(aip);
      int j = j0;
      for (; j + 4 <= j1; j += 4)
        _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j),
                                                   _mm256_loadu_pd(crow + j)));
      for (; j < j1; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nn(int m, int n, int k, double alpha, const double* a,
             std::ptrdiff_t a_rs, std::ptrdiff_t a_cs, const double* b,
             int ldb, double* c, int ldc) {
  const int m4 = m - m % 4;
  const int n8 = n - n % 8;
  for (int i = 0; i < m4; i += 4) {
    for (int j = 0; j < n8; j += 8) {
      micro_4x8(k, a + i * a_rs, a_rs, a_cs, alpha, b + j, ldb,
                c + static_cast<std::ptrdiff_t>(i) * ldc + j, ldc);
    }
  }
  if (n8 < n) gemm_edge(0, m4, n8, n, k, alpha, a, a_rs, a_cs, b, ldb, c, ldc);
  if (m4 < m) gemm_edge(m4, m, 0, n, k, alpha, a, a_rs, a_cs, b, ldb, c, ldc);
}

void gemm_avx2(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
               const double* a, int lda, const double* b, int ldb, double beta,
               double* c, int ldc) {
  scale_rows(m, n, beta, c, ldc);
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;
  const std::ptrdiff_t a_rs = trans_a ? 1 : lda;
  const std::ptrdiff_t a_cs = trans_a ? lda : 1;
  if (!trans_b) {
    gemm_nn(m, n, k, alpha, a, a_rs, a_cs, b, ldb, c, ldc);
    return;
  }
  // Materialize op(B) as a row-major k x n panel.
  thread_local std::vector<double> panel;
  panel.resize(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    const double* src = b + static_cast<std::ptrdiff_t>(j) * ldb;
    for (int p = 0; p < k; ++p) panel[static_cast<std::size_t>(p) * n + j] = src[p];
  }
  gemm_nn(m, n, k, alpha, a, a_rs, a_cs, panel.data(), n, c, ldc);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4),
                           acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

constexpr KernelTable kAvx2Table{Isa::kAvx2, gemm_avx2, dot_avx2, axpy_avx2,
                                 squared_distance_avx2};

}  // namespace

const KernelTable& avx2_table() { return kAvx2Table; }

}  // namespace agpi::simd
