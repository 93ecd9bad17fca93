// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "bater/kernels.hpp"

namespace bater::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

// Row-panel kernel: 4 rows of A against 8 columns of B over k in [p0, p1).
inline void block_4x8(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                      std::size_t p0, std::size_t p1) {
  const double* a0 = a;
  const double* a1 = a + k;
  const double* a2 = a + 2 * k;
  const double* a3 = a + 3 * k;
  __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + m), c11 = _mm256_loadu_pd(c + m + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * m), c21 = _mm256_loadu_pd(c + 2 * m + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * m), c31 = _mm256_loadu_pd(c + 3 * m + 4);
  for (std::size_t p = p0; p < p1; ++p) {
    const double* bp = b + p * m;
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + m, c10);
  _mm256_storeu_pd(c + m + 4, c11);
  _mm256_storeu_pd(c + 2 * m, c20);
  _mm256_storeu_pd(c + 2 * m + 4, c21);
  _mm256_storeu_pd(c + 3 * m, c30);
  _mm256_storeu_pd(c + 3 * m + 4, c31);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// Depth of the k-blocking; keeps a 4-row slice of A and an 8-wide panel of B in L1.
constexpr std::size_t kDepth = 256;

void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  const std::size_t m8 = m - m % 8;
  for (std::size_t p0 = 0; p0 < k; p0 += kDepth) {
    const std::size_t p1 = std::min(k, p0 + kDepth);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      for (std::size_t j = 0; j < m8; j += 8) block_4x8(a + i * k, b + j, c + i * m + j, k, m, p0, p1);
      if (m8 < m) {
        for (std::size_t r = i; r < i + 4; ++r)
          for (std::size_t p = p0; p < p1; ++p) {
            const double arp = a[r * k + p];
            for (std::size_t j = m8; j < m; ++j) c[r * m + j] = std::fma(arp, b[p * m + j], c[r * m + j]);
          }
      }
    }
    for (; i < n; ++i)
      for (std::size_t p = p0; p < p1; ++p) {
        const double aip = a[i * k + p];
        if (aip != 0.0) axpy(aip, b + p * m, c + i * m, m);
      }
  }
}

// Dot products of two A rows against four B rows.
inline void block_2x4(const double* a, const double* b, double* c, std::size_t m, std::size_t d,
                      bool accumulate) {
  const std::size_t m4 = m - m % 4;
  __m256d acc[2][4];
  for (auto& r : acc)
    for (auto& v : r) v = _mm256_setzero_pd();
  for (std::size_t j = 0; j < m4; j += 4) {
    const __m256d x0 = _mm256_loadu_pd(a + j);
    const __m256d x1 = _mm256_loadu_pd(a + m + j);
    for (int q = 0; q < 4; ++q) {
      const __m256d y = _mm256_loadu_pd(b + q * m + j);
      acc[0][q] = _mm256_fmadd_pd(x0, y, acc[0][q]);
      acc[1][q] = _mm256_fmadd_pd(x1, y, acc[1][q]);
    }
  }
  for (int r = 0; r < 2; ++r)
    for (int q = 0; q < 4; ++q) {
      double sum = hsum(acc[r][q]);
      for (std::size_t j = m4; j < m; ++j) sum = std::fma(a[r * m + j], b[q * m + j], sum);
      double& out = c[r * d + q];
      out = accumulate ? out + sum : sum;
    }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double sum = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum = std::fma(x[i], y[i], sum);
  return sum;
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m, std::size_t d,
             bool accumulate) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    std::size_t r = 0;
    for (; r + 4 <= d; r += 4) block_2x4(a + i * m, b + r * m, c + i * d + r, m, d, accumulate);
    for (; r < d; ++r)
      for (std::size_t q = i; q < i + 2; ++q) {
        const double sum = dot(a + q * m, b + r * m, m);
        c[q * d + r] = accumulate ? c[q * d + r] + sum : sum;
      }
  }
  for (; i < n; ++i)
    for (std::size_t r = 0; r < d; ++r) {
      const double sum = dot(a + i * m, b + r * m, m);
      c[i * d + r] = accumulate ? c[i * d + r] + sum : sum;
    }
}

void reparameterize(const double* mu, const double* sigma, const double* eps, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(_mm256_loadu_pd(sigma + i), _mm256_loadu_pd(eps + i),
                                              _mm256_loadu_pd(mu + i)));
  for (; i < n; ++i) out[i] = std::fma(sigma[i], eps[i], mu[i]);
}

double squared_distance(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_fmadd_pd(diff, diff, acc);
  }
  double sum = hsum(acc);
  for (; i < n; ++i) {
    const double diff = x[i] - y[i];
    sum = std::fma(diff, diff, sum);
  }
  return sum;
}

constexpr KernelTable kAvx2{Isa::avx2, "avx2", gemm_nn, gemm_nt, dot, axpy, reparameterize, squared_distance};

}  // namespace

const KernelTable* avx2_table() noexcept { return &kAvx2; }

}  // namespace bater::kernels
