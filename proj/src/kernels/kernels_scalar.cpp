// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "bater/kernels.hpp"

namespace bater::kernels {
namespace {

void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m, std::size_t d,
             bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * m;
    for (std::size_t r = 0; r < d; ++r) {
      const double* br = b + r * m;
      double sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) sum += ai[j] * br[j];
      c[i * d + r] = accumulate ? c[i * d + r] + sum : sum;
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void reparameterize(const double* mu, const double* sigma, const double* eps, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = mu[i] + sigma[i] * eps[i];
}

double squared_distance(const double* x, const double* y, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = x[i] - y[i];
    sum += diff * diff;
  }
  return sum;
}

constexpr KernelTable kScalar{Isa::scalar, "scalar", gemm_nn, gemm_nt, dot, axpy, reparameterize,
                              squared_distance};

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

}  // namespace bater::kernels
